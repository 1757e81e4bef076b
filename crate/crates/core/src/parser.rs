//! Graph-based dependency parsing: head/dependent projections, arc and label
//! scorers, first-order Eisner decoding and the structured hinge loss.

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Init, NodeId, ParamId, ParameterStore};
use crate::crf::argmax;
use crate::error::{Error, Result};
use crate::nn::{dropout, Activation, Linear};

/// Square `(n+1) x (n+1)` matrix of arc scores; `[h][d]` scores `h -> d`.
/// Column 0 and the diagonal are never read.
pub type ScoreMatrix = Vec<Vec<f64>>;

/// Arc-score nodes for every ordered (head, dependent) pair of a sentence.
#[derive(Clone, Debug)]
pub struct ArcScores {
    size: usize,
    nodes: Vec<Option<NodeId>>,
}

impl ArcScores {
    /// Number of words, excluding the root.
    pub fn words(&self) -> usize {
        self.size - 1
    }

    pub fn node(&self, head: usize, dep: usize) -> Option<NodeId> {
        self.nodes[head * self.size + dep]
    }

    pub fn values(&self, g: &Graph) -> ScoreMatrix {
        let mut m = vec![vec![0.0; self.size]; self.size];
        for h in 0..self.size {
            for d in 1..self.size {
                if let Some(id) = self.node(h, d) {
                    m[h][d] = g.scalar(id);
                }
            }
        }
        m
    }
}

/// Projections and scorers on top of the parser BiLSTM.
#[derive(Clone, Debug)]
pub struct ArcScorer {
    arc_head: Linear,
    arc_dep: Linear,
    label_head: Linear,
    label_dep: Linear,
    /// The arc FFNN's hidden layer over `[head; dep]`, kept as the two column
    /// blocks of its weight matrix so each block is applied once per word.
    arc_hidden_head: ParamId,
    arc_hidden_dep: ParamId,
    arc_hidden_bias: ParamId,
    arc_output: ParamId,
    label_output: Linear,
    keep: f64,
}

/// Per-sentence parser features: arc scores plus label projections.
#[derive(Clone, Debug)]
pub struct ParserFeatures {
    pub arcs: ArcScores,
    label_heads: Vec<NodeId>,
    label_deps: Vec<NodeId>,
}

impl ArcScorer {
    pub fn new(
        store: &mut ParameterStore,
        name: &str,
        input: usize,
        projection: usize,
        num_labels: usize,
        keep: f64,
    ) -> Result<Self> {
        let proj = |store: &mut ParameterStore, part: &str| {
            Linear::new(store, &format!("{name}/{part}"), input, projection, Activation::Tanh)
        };
        Ok(ArcScorer {
            arc_head: proj(store, "arc_head")?,
            arc_dep: proj(store, "arc_dep")?,
            label_head: proj(store, "label_head")?,
            label_dep: proj(store, "label_dep")?,
            arc_hidden_head: store.add(
                &format!("{name}/arc/hidden_head"),
                &[projection, projection],
                Init::GlorotUniform,
            )?,
            arc_hidden_dep: store.add(
                &format!("{name}/arc/hidden_dep"),
                &[projection, projection],
                Init::GlorotUniform,
            )?,
            arc_hidden_bias: store.add(&format!("{name}/arc/hidden_bias"), &[projection], Init::Zeros)?,
            arc_output: store.add(&format!("{name}/arc/output"), &[projection], Init::GlorotUniform)?,
            label_output: Linear::new(
                store,
                &format!("{name}/label/output"),
                2 * projection,
                num_labels,
                Activation::Identity,
            )?,
            keep,
        })
    }

    pub fn num_labels(&self) -> usize {
        self.label_output.output
    }

    /// Scores every ordered pair over `states`, whose position 0 is the root.
    pub fn features(
        &self,
        g: &mut Graph,
        states: &[NodeId],
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<ParserFeatures> {
        let size = states.len();
        if size < 2 {
            return Err(Error::Input("parser needs at least one word".into()));
        }
        let mut arc_h = Vec::with_capacity(size);
        let mut arc_d = Vec::with_capacity(size);
        let mut label_heads = Vec::with_capacity(size);
        let mut label_deps = Vec::with_capacity(size);
        let wh = g.param(self.arc_hidden_head);
        let wd = g.param(self.arc_hidden_dep);
        let bias = g.param(self.arc_hidden_bias);
        for &s in states {
            let s = dropout(g, s, self.keep, rng.as_deref_mut())?;
            let ah = self.arc_head.forward(g, s)?;
            let ad = self.arc_dep.forward(g, s)?;
            let ah = dropout(g, ah, self.keep, rng.as_deref_mut())?;
            let ad = dropout(g, ad, self.keep, rng.as_deref_mut())?;
            arc_h.push(g.matvec(wh, ah)?);
            let dep = g.matvec(wd, ad)?;
            arc_d.push(g.add(dep, bias)?);
            let lh = self.label_head.forward(g, s)?;
            let ld = self.label_dep.forward(g, s)?;
            label_heads.push(dropout(g, lh, self.keep, rng.as_deref_mut())?);
            label_deps.push(dropout(g, ld, self.keep, rng.as_deref_mut())?);
        }
        let out = g.param(self.arc_output);
        let mut nodes = vec![None; size * size];
        for h in 0..size {
            for d in 1..size {
                if h == d {
                    continue;
                }
                let hidden = g.add(arc_h[h], arc_d[d])?;
                let hidden = g.tanh(hidden)?;
                nodes[h * size + d] = Some(g.dot(out, hidden)?);
            }
        }
        Ok(ParserFeatures {
            arcs: ArcScores { size, nodes },
            label_heads,
            label_deps,
        })
    }

    /// Unnormalized label scores for the arc `head -> dep`.
    pub fn label_logits(&self, g: &mut Graph, feats: &ParserFeatures, head: usize, dep: usize) -> Result<NodeId> {
        let x = g.concat(&[feats.label_heads[head], feats.label_deps[dep]])?;
        Ok(self.label_output.forward(g, x)?)
    }

    /// Summed cross-entropy of the gold labels on the given (gold) arcs.
    pub fn label_loss(
        &self,
        g: &mut Graph,
        feats: &ParserFeatures,
        heads: &[usize],
        labels: &[usize],
    ) -> Result<NodeId> {
        if heads.len() != labels.len() || heads.len() != feats.arcs.words() {
            return Err(Error::Input("label loss: arcs, labels and words disagree".into()));
        }
        let mut terms = Vec::with_capacity(heads.len());
        for (d, (&h, &y)) in heads.iter().zip(labels).enumerate() {
            if y >= self.num_labels() {
                return Err(Error::Input(format!("label index {y} outside label set")));
            }
            let logits = self.label_logits(g, feats, h, d + 1)?;
            let z = g.log_sum_exp(logits)?;
            let p = g.pick(logits, y)?;
            terms.push(g.sub(z, p)?);
        }
        Ok(g.add_n(&terms)?)
    }

    /// Most probable label per arc, lowest index on ties.
    pub fn predict_labels(&self, g: &mut Graph, feats: &ParserFeatures, heads: &[usize]) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(heads.len());
        for (d, &h) in heads.iter().enumerate() {
            let logits = self.label_logits(g, feats, h, d + 1)?;
            out.push(argmax(g.value(logits).data()));
        }
        Ok(out)
    }
}

/// Total score of a tree under `scores`; `heads` are 1-based with 0 = root.
pub fn tree_score(scores: &ScoreMatrix, heads: &[usize]) -> f64 {
    heads.iter().enumerate().map(|(d, &h)| scores[h][d + 1]).sum()
}

const LEFT: usize = 0;
const RIGHT: usize = 1;

/// First-order Eisner decoding: the maximum-score projective tree rooted at
/// position 0 (which may take several children). Returns 1-based heads for
/// words `1..=n`. Among equal-scoring split points the leftmost is kept.
pub fn eisner(scores: &ScoreMatrix) -> Vec<usize> {
    let size = scores.len();
    assert!(size >= 2, "eisner needs at least one word");
    let n = size - 1;
    let neg = f64::NEG_INFINITY;
    // [s][t][dir]: complete and incomplete spans with split backpointers.
    let mut complete = vec![vec![[0.0f64; 2]; size]; size];
    let mut incomplete = vec![vec![[neg; 2]; size]; size];
    let mut complete_bp = vec![vec![[0usize; 2]; size]; size];
    let mut incomplete_bp = vec![vec![[0usize; 2]; size]; size];
    for s in 0..size {
        for t in s + 1..size {
            complete[s][t] = [neg; 2];
        }
    }

    for k in 1..=n {
        for s in 0..=n - k {
            let t = s + k;
            // Incomplete spans: an arc between s and t over a split r.
            let mut best = neg;
            let mut arg = s;
            for r in s..t {
                let v = complete[s][r][RIGHT] + complete[r + 1][t][LEFT];
                if v > best {
                    best = v;
                    arg = r;
                }
            }
            incomplete[s][t][RIGHT] = best + scores[s][t];
            incomplete_bp[s][t][RIGHT] = arg;
            if s > 0 {
                incomplete[s][t][LEFT] = best + scores[t][s];
                incomplete_bp[s][t][LEFT] = arg;
            }

            let mut best = neg;
            let mut arg = s;
            for r in s..t {
                let v = complete[s][r][LEFT] + incomplete[r][t][LEFT];
                if v > best {
                    best = v;
                    arg = r;
                }
            }
            complete[s][t][LEFT] = best;
            complete_bp[s][t][LEFT] = arg;

            let mut best = neg;
            let mut arg = s + 1;
            for r in s + 1..=t {
                let v = incomplete[s][r][RIGHT] + complete[r][t][RIGHT];
                if v > best {
                    best = v;
                    arg = r;
                }
            }
            complete[s][t][RIGHT] = best;
            complete_bp[s][t][RIGHT] = arg;
        }
    }

    let mut heads = vec![0usize; n];
    let mut stack = vec![(0usize, n, RIGHT, true)];
    while let Some((s, t, dir, is_complete)) = stack.pop() {
        if s == t {
            continue;
        }
        if is_complete {
            let r = complete_bp[s][t][dir];
            if dir == LEFT {
                stack.push((s, r, LEFT, true));
                stack.push((r, t, LEFT, false));
            } else {
                stack.push((s, r, RIGHT, false));
                stack.push((r, t, RIGHT, true));
            }
        } else {
            let r = incomplete_bp[s][t][dir];
            if dir == LEFT {
                heads[s - 1] = t;
            } else {
                heads[t - 1] = s;
            }
            stack.push((s, r, RIGHT, true));
            stack.push((r + 1, t, LEFT, true));
        }
    }
    heads
}

/// Outcome of cost-augmented decoding.
#[derive(Clone, Debug)]
pub struct HingeOutcome {
    pub loss: NodeId,
    /// Tree found under the margin-augmented scores.
    pub predicted: Vec<usize>,
}

/// Structured hinge loss with margin 1 per wrong arc:
/// `max(0, max_y [score(y) + wrong(y)] - score(gold))`, the inner max found
/// by Eisner decoding on margin-augmented scores.
pub fn arc_hinge_loss(g: &mut Graph, arcs: &ArcScores, gold: &[usize]) -> Result<HingeOutcome> {
    let n = arcs.words();
    if gold.len() != n {
        return Err(Error::Input(format!("{} gold heads for {n} words", gold.len())));
    }
    let mut augmented = arcs.values(g);
    for (h, row) in augmented.iter_mut().enumerate() {
        for (d, v) in row.iter_mut().enumerate().skip(1) {
            if gold[d - 1] != h {
                *v += 1.0;
            }
        }
    }
    let predicted = eisner(&augmented);
    if predicted == gold {
        let zero = g.input(crate::autodiff::Tensor::scalar(0.0))?;
        return Ok(HingeOutcome { loss: zero, predicted });
    }
    let mut terms = Vec::with_capacity(2 * n);
    let mut wrong = 0.0;
    for d in 1..=n {
        let (p, t) = (predicted[d - 1], gold[d - 1]);
        if p == t {
            continue;
        }
        wrong += 1.0;
        let ps = arcs.node(p, d).expect("arc scored");
        let ts = arcs.node(t, d).expect("arc scored");
        terms.push(g.sub(ps, ts)?);
    }
    let diff = g.add_n(&terms)?;
    let margin = g.input(crate::autodiff::Tensor::scalar(wrong))?;
    let total = g.add(diff, margin)?;
    Ok(HingeOutcome {
        loss: g.relu(total)?,
        predicted,
    })
}
