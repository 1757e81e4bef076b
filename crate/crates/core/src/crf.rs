//! Linear-chain CRF: forward-algorithm negative log-likelihood and Viterbi
//! decoding, plus the per-position softmax alternative.

use crate::autodiff::{AutodiffError, Graph, NodeId, ParamId, ParameterStore, Tensor};
use crate::error::{Error, Result};

/// Stand-in for an impossible transition; finite so the tape never sees -inf.
pub const MASKED: f64 = -1e9;

/// Transition scores between `T` tags plus virtual start and stop states.
///
/// The table is `(T+2) x (T+2)` and stored **destination-major**: entry
/// `[to][from]` scores the move `from -> to`. Index `T` is the start state
/// and `T+1` the stop state. Moves into start and out of stop are masked.
#[derive(Clone, Debug)]
pub struct Crf {
    pub transitions: ParamId,
    pub num_tags: usize,
}

impl Crf {
    pub fn new(store: &mut ParameterStore, name: &str, num_tags: usize) -> Result<Self> {
        let size = num_tags + 2;
        let mut table = Tensor::zeros(&[size, size]);
        let (start, stop) = (num_tags, num_tags + 1);
        for k in 0..size {
            table.row_mut(start)[k] = MASKED;
            table.row_mut(k)[stop] = MASKED;
        }
        let transitions = store.add_tensor(&format!("{name}/transitions"), table)?;
        Ok(Crf {
            transitions,
            num_tags,
        })
    }

    pub fn start(&self) -> usize {
        self.num_tags
    }

    pub fn stop(&self) -> usize {
        self.num_tags + 1
    }

    fn flat(&self, from: usize, to: usize) -> usize {
        to * (self.num_tags + 2) + from
    }

    /// Score of the move `from -> to` under the stored table.
    pub fn transition(&self, store: &ParameterStore, from: usize, to: usize) -> f64 {
        store.value(self.transitions).data()[self.flat(from, to)]
    }

    fn check(&self, g: &Graph, emissions: &[NodeId], gold: Option<&[usize]>) -> Result<()> {
        if emissions.is_empty() {
            return Err(Error::Input("CRF over an empty sequence".into()));
        }
        for e in emissions {
            let len = g.value(*e).len();
            if len != self.num_tags {
                return Err(AutodiffError::ShapeMismatch {
                    op: "crf",
                    left: vec![self.num_tags],
                    right: vec![len],
                }
                .into());
            }
        }
        if let Some(gold) = gold {
            if gold.len() != emissions.len() {
                return Err(Error::Input(format!(
                    "{} gold tags for {} positions",
                    gold.len(),
                    emissions.len()
                )));
            }
            if let Some(t) = gold.iter().find(|&&t| t >= self.num_tags) {
                return Err(Error::Input(format!("gold tag {t} outside tagset of {}", self.num_tags)));
            }
        }
        Ok(())
    }

    /// `log Z - score(gold)`, with `Z` from the forward algorithm in log space.
    pub fn nll(&self, g: &mut Graph, emissions: &[NodeId], gold: &[usize]) -> Result<NodeId> {
        self.check(g, emissions, Some(gold))?;
        let t = self.num_tags;
        let trans = g.param(self.transitions);

        let mut start_scores = Vec::with_capacity(t);
        let mut incoming = Vec::with_capacity(t);
        for j in 0..t {
            start_scores.push(g.pick(trans, self.flat(self.start(), j))?);
            let row = g.pick_row(trans, j)?;
            incoming.push(g.slice(row, 0, t)?);
        }
        let start = g.concat(&start_scores)?;
        let stop_row = g.pick_row(trans, self.stop())?;
        let stop = g.slice(stop_row, 0, t)?;

        let mut alpha = g.add(start, emissions[0])?;
        for &e in &emissions[1..] {
            let mut next = Vec::with_capacity(t);
            for inc in &incoming {
                let s = g.add(alpha, *inc)?;
                next.push(g.log_sum_exp(s)?);
            }
            let next = g.concat(&next)?;
            alpha = g.add(next, e)?;
        }
        let fin = g.add(alpha, stop)?;
        let log_z = g.log_sum_exp(fin)?;

        let mut terms = Vec::with_capacity(2 * gold.len() + 1);
        let mut prev = self.start();
        for (&e, &y) in emissions.iter().zip(gold) {
            terms.push(g.pick(e, y)?);
            terms.push(g.pick(trans, self.flat(prev, y))?);
            prev = y;
        }
        terms.push(g.pick(trans, self.flat(prev, self.stop()))?);
        let gold_score = g.add_n(&terms)?;
        Ok(g.sub(log_z, gold_score)?)
    }

    /// Highest-scoring tag sequence including start and stop moves. Ties go to
    /// the lower tag index at every backpointer and at the final step.
    pub fn viterbi(&self, store: &ParameterStore, emissions: &[Vec<f64>]) -> Vec<usize> {
        let t = self.num_tags;
        let n = emissions.len();
        if n == 0 {
            return Vec::new();
        }
        let tr = |from: usize, to: usize| self.transition(store, from, to);
        let mut delta: Vec<f64> = (0..t).map(|j| tr(self.start(), j) + emissions[0][j]).collect();
        let mut back = vec![vec![0usize; t]; n];
        for pos in 1..n {
            let mut next = vec![0.0; t];
            for j in 0..t {
                let mut best = 0;
                let mut best_score = delta[0] + tr(0, j);
                for i in 1..t {
                    let s = delta[i] + tr(i, j);
                    if s > best_score {
                        best = i;
                        best_score = s;
                    }
                }
                back[pos][j] = best;
                next[j] = best_score + emissions[pos][j];
            }
            delta = next;
        }
        let mut last = 0;
        let mut last_score = delta[0] + tr(0, self.stop());
        for j in 1..t {
            let s = delta[j] + tr(j, self.stop());
            if s > last_score {
                last = j;
                last_score = s;
            }
        }
        let mut path = vec![last; n];
        for pos in (1..n).rev() {
            path[pos - 1] = back[pos][path[pos]];
        }
        path
    }

    /// Unnormalized score of a complete path.
    pub fn path_score(&self, store: &ParameterStore, emissions: &[Vec<f64>], tags: &[usize]) -> f64 {
        let mut score = 0.0;
        let mut prev = self.start();
        for (e, &y) in emissions.iter().zip(tags) {
            score += self.transition(store, prev, y) + e[y];
            prev = y;
        }
        score + self.transition(store, prev, self.stop())
    }
}

/// Sum over positions of independent softmax cross-entropies.
pub fn softmax_nll(g: &mut Graph, emissions: &[NodeId], gold: &[usize]) -> Result<NodeId> {
    if emissions.is_empty() {
        return Err(Error::Input("softmax over an empty sequence".into()));
    }
    if gold.len() != emissions.len() {
        return Err(Error::Input(format!(
            "{} gold tags for {} positions",
            gold.len(),
            emissions.len()
        )));
    }
    let mut terms = Vec::with_capacity(emissions.len());
    for (&e, &y) in emissions.iter().zip(gold) {
        let z = g.log_sum_exp(e)?;
        let p = g.pick(e, y)?;
        terms.push(g.sub(z, p)?);
    }
    Ok(g.add_n(&terms)?)
}

/// Index of the largest score, lowest index on ties.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn setup(t: usize, seed: u64) -> (ParameterStore, Crf) {
        let mut store = ParameterStore::new(seed);
        let crf = Crf::new(&mut store, "crf", t).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let size = t + 2;
        for to in 0..size {
            for from in 0..size {
                if to != crf.start() && from != crf.stop() {
                    store.value_mut(crf.transitions).row_mut(to)[from] = rng.gen_range(-2.0..2.0);
                }
            }
        }
        (store, crf)
    }

    fn random_emissions(rng: &mut ChaCha8Rng, n: usize, t: usize) -> Vec<Vec<f64>> {
        (0..n).map(|_| (0..t).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect()
    }

    fn nll_value(store: &ParameterStore, crf: &Crf, em: &[Vec<f64>], gold: &[usize]) -> f64 {
        let mut g = Graph::new(store);
        let ids: Vec<NodeId> = em.iter().map(|e| g.input(Tensor::vector(e.clone())).unwrap()).collect();
        let l = crf.nll(&mut g, &ids, gold).unwrap();
        g.scalar(l)
    }

    fn all_paths(n: usize, t: usize) -> Vec<Vec<usize>> {
        let mut out = vec![vec![]];
        for _ in 0..n {
            out = out
                .into_iter()
                .flat_map(|p| (0..t).map(move |y| [p.clone(), vec![y]].concat()))
                .collect();
        }
        out
    }

    #[test]
    fn single_tag_has_zero_loss() {
        let (store, crf) = setup(1, 3);
        let em = vec![vec![0.4], vec![-1.3], vec![2.0]];
        assert!(nll_value(&store, &crf, &em, &[0, 0, 0]).abs() < 1e-12);
    }

    #[test]
    fn uniform_scores_give_n_log_t() {
        let mut store = ParameterStore::new(0);
        let crf = Crf::new(&mut store, "crf", 3).unwrap();
        let em = vec![vec![0.0; 3]; 4];
        let l = nll_value(&store, &crf, &em, &[0, 2, 1, 1]);
        assert!((l - 4.0 * 3f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn matches_path_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let (store, crf) = setup(2, 5);
        let em = random_emissions(&mut rng, 3, 2);
        let scores: Vec<f64> = all_paths(3, 2)
            .iter()
            .map(|p| crf.path_score(&store, &em, p))
            .collect();
        let log_z = crate::autodiff::log_sum_exp(&scores);
        for (p, s) in all_paths(3, 2).iter().zip(&scores) {
            let expected = log_z - s;
            assert!((nll_value(&store, &crf, &em, p) - expected).abs() < 1e-10);
            assert!(expected >= 0.0);
        }
    }

    #[test]
    fn empty_sequence_rejected() {
        let (store, crf) = setup(2, 1);
        let mut g = Graph::new(&store);
        assert!(crf.nll(&mut g, &[], &[]).is_err());
        assert!(softmax_nll(&mut g, &[], &[]).is_err());
    }

    #[test]
    fn viterbi_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for case in 0..100 {
            let n = rng.gen_range(1..=6);
            let t = rng.gen_range(1..=4);
            let (store, crf) = setup(t, case);
            let em = random_emissions(&mut rng, n, t);
            let path = crf.viterbi(&store, &em);
            let mut best = f64::NEG_INFINITY;
            let mut best_path = vec![];
            for p in all_paths(n, t) {
                let s = crf.path_score(&store, &em, &p);
                if s > best {
                    best = s;
                    best_path = p;
                }
            }
            assert_eq!(crf.path_score(&store, &em, &path), best);
            assert_eq!(path, best_path);
        }
    }

    #[test]
    fn viterbi_ties_go_low() {
        let mut store = ParameterStore::new(0);
        let crf = Crf::new(&mut store, "crf", 4).unwrap();
        assert_eq!(crf.viterbi(&store, &vec![vec![1.0; 4]; 5]), vec![0; 5]);
        let crf1 = Crf::new(&mut store, "one", 1).unwrap();
        assert_eq!(crf1.viterbi(&store, &vec![vec![0.3]; 3]), vec![0; 3]);
    }

    #[test]
    fn softmax_examples() {
        let store = ParameterStore::new(0);
        let mut g = Graph::new(&store);
        let e = g.input(Tensor::vector(vec![0.0, 0.0])).unwrap();
        let l = softmax_nll(&mut g, &[e], &[1]).unwrap();
        assert!((g.scalar(l) - std::f64::consts::LN_2).abs() < 1e-12);

        // Degenerate agreement with the CRF: one tag, zero transitions.
        let mut store = ParameterStore::new(0);
        let crf = Crf::new(&mut store, "crf", 1).unwrap();
        let mut g = Graph::new(&store);
        let ids: Vec<NodeId> = [0.5, -2.0]
            .iter()
            .map(|v| g.input(Tensor::vector(vec![*v])).unwrap())
            .collect();
        let a = crf.nll(&mut g, &ids, &[0, 0]).unwrap();
        let b = softmax_nll(&mut g, &ids, &[0, 0]).unwrap();
        assert!((g.scalar(a) - g.scalar(b)).abs() < 1e-12);
    }

    #[test]
    fn crf_and_softmax_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (store, crf) = setup(3, 2);
        let em = random_emissions(&mut rng, 4, 3);
        let gold = [2, 0, 1, 1];
        for use_crf in [true, false] {
            let eval = |store: &ParameterStore, em: &[Vec<f64>]| {
                let mut g = Graph::new(store);
                let ids: Vec<NodeId> = em.iter().map(|e| g.variable(Tensor::vector(e.clone())).unwrap()).collect();
                let l = if use_crf {
                    crf.nll(&mut g, &ids, &gold).unwrap()
                } else {
                    softmax_nll(&mut g, &ids, &gold).unwrap()
                };
                let grads = g.backward(l).unwrap();
                let eg: Vec<Vec<f64>> = ids.iter().map(|i| grads.node(*i).unwrap().data().to_vec()).collect();
                (g.scalar(l), eg, grads.param(crf.transitions).cloned())
            };
            let (_, eg, tg) = eval(&store, &em);
            let h = 1e-5;
            for p in 0..em.len() {
                for k in 0..3 {
                    let mut plus = em.clone();
                    plus[p][k] += h;
                    let mut minus = em.clone();
                    minus[p][k] -= h;
                    let numeric = (eval(&store, &plus).0 - eval(&store, &minus).0) / (2.0 * h);
                    assert!((numeric - eg[p][k]).abs() < 1e-6);
                }
            }
            if use_crf {
                let tg = tg.unwrap();
                for e in 0..tg.len() {
                    let mut plus = store.clone();
                    plus.value_mut(crf.transitions).data_mut()[e] += h;
                    let mut minus = store.clone();
                    minus.value_mut(crf.transitions).data_mut()[e] -= h;
                    let numeric = (eval(&plus, &em).0 - eval(&minus, &em).0) / (2.0 * h);
                    assert!((numeric - tg.data()[e]).abs() < 1e-6, "transition {e}");
                }
            }
        }
    }
}
