//! Span-aligned scoring of segmentation, tagging and attachment, paired
//! significance tests, and batch prediction.

use std::collections::BTreeMap;
use std::fmt;

use log::warn;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::corpus::{AnnotatedSentence, WordSpan};
use crate::error::{Error, Result};
use crate::model::Model;

/// Counts behind one precision/recall/F1 triple.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Metric {
    pub correct: usize,
    pub system: usize,
    pub gold: usize,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        100.0 * a as f64 / b as f64
    }
}

impl Metric {
    pub fn precision(&self) -> f64 {
        ratio(self.correct, self.system)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.correct, self.gold)
    }

    /// Harmonic mean of precision and recall in percent; 0 when both are 0.
    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    fn add(&mut self, other: Metric) {
        self.correct += other.correct;
        self.system += other.system;
        self.gold += other.gold;
    }
}

/// Percentage rounded half-up to two decimals.
pub fn round2(x: f64) -> f64 {
    (x * 100.0 + 0.5).floor() / 100.0
}

/// Per-sentence F1 scores; `None` where the gold sentence lacks the layer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SentenceScores {
    pub wseg: f64,
    pub ptag: Option<f64>,
    pub uas: Option<f64>,
    pub las: Option<f64>,
}

/// Corpus-level scores. Tagging and attachment metrics are present only when
/// every gold sentence carries the corresponding layer.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub wseg: Metric,
    pub ptag: Option<Metric>,
    pub uas: Option<Metric>,
    pub las: Option<Metric>,
    /// Number of exactly matching word spans.
    pub aligned: usize,
    pub sentences: Vec<SentenceScores>,
}

impl EvalReport {
    fn rows(&self) -> Vec<(&'static str, Option<Metric>)> {
        vec![("wseg", Some(self.wseg)), ("ptag", self.ptag), ("uas", self.uas), ("las", self.las)]
    }

    /// Line-delimited `key=value` records.
    pub fn to_key_values(&self) -> String {
        let mut out = format!(
            "gold_words={}\nsystem_words={}\naligned_words={}\n",
            self.wseg.gold, self.wseg.system, self.aligned
        );
        for (name, m) in self.rows() {
            if let Some(m) = m {
                out.push_str(&format!(
                    "{name}_precision={:.2}\n{name}_recall={:.2}\n{name}_f1={:.2}\n{name}_correct={}\n",
                    round2(m.precision()),
                    round2(m.recall()),
                    round2(m.f1()),
                    m.correct
                ));
            }
        }
        out
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Metric | Precision | Recall | F1 Score")?;
        writeln!(f, "-------+-----------+--------+---------")?;
        for (name, m) in self.rows() {
            if let Some(m) = m {
                writeln!(
                    f,
                    "{:<6} | {:>9.2} | {:>6.2} | {:>8.2}",
                    name.to_uppercase(),
                    round2(m.precision()),
                    round2(m.recall()),
                    round2(m.f1())
                )?;
            }
        }
        Ok(())
    }
}

fn words(s: &AnnotatedSentence, side: &str) -> Result<Vec<WordSpan>> {
    s.words
        .clone()
        .ok_or_else(|| Error::Evaluation(format!("{side} sentence is not segmented")))
}

/// Pairs `(gold word, system word)` whose syllable spans coincide exactly.
pub fn align(gold: &AnnotatedSentence, system: &AnnotatedSentence) -> Result<Vec<(usize, usize)>> {
    if gold.syllables != system.syllables {
        return Err(Error::Evaluation(format!(
            "syllable streams differ: {:?} vs {:?}",
            gold.syllables.join(" "),
            system.syllables.join(" ")
        )));
    }
    let g = words(gold, "gold")?;
    let s = words(system, "system")?;
    let index: BTreeMap<(usize, usize), usize> = s.iter().enumerate().map(|(i, w)| ((w.first, w.last), i)).collect();
    Ok(g
        .iter()
        .enumerate()
        .filter_map(|(i, w)| index.get(&(w.first, w.last)).map(|&j| (i, j)))
        .collect())
}

struct SentenceCounts {
    wseg: Metric,
    ptag: Option<Metric>,
    uas: Option<Metric>,
    las: Option<Metric>,
}

fn score_sentence(gold: &AnnotatedSentence, system: &AnnotatedSentence) -> Result<SentenceCounts> {
    let pairs = align(gold, system)?;
    let base = Metric {
        correct: pairs.len(),
        system: words(system, "system")?.len(),
        gold: words(gold, "gold")?.len(),
    };
    let with = |correct: usize| Metric { correct, ..base };

    let ptag = gold.pos_tags.as_ref().map(|gp| {
        let sp = system.pos_tags.as_ref();
        with(pairs.iter().filter(|(i, j)| sp.is_some_and(|sp| sp[*j] == gp[*i])).count())
    });

    let (uas, las) = match &gold.heads {
        None => (None, None),
        Some(gh) => {
            let to_system: BTreeMap<usize, usize> = pairs.iter().copied().collect();
            let attached = |i: usize, j: usize| -> bool {
                let Some(sh) = &system.heads else { return false };
                match (gh[i], sh[j]) {
                    (0, 0) => true,
                    (0, _) | (_, 0) => false,
                    (g, s) => to_system.get(&(g - 1)) == Some(&(s - 1)),
                }
            };
            let heads_ok: Vec<&(usize, usize)> = pairs.iter().filter(|(i, j)| attached(*i, *j)).collect();
            let labeled = match (&gold.deprels, &system.deprels) {
                (Some(gl), Some(sl)) => heads_ok.iter().filter(|(i, j)| gl[*i] == sl[*j]).count(),
                _ => 0,
            };
            (Some(with(heads_ok.len())), gold.deprels.as_ref().map(|_| with(labeled)))
        }
    };
    Ok(SentenceCounts {
        wseg: base,
        ptag,
        uas,
        las,
    })
}

/// Scores parallel gold and system corpora.
pub fn evaluate(gold: &[AnnotatedSentence], system: &[AnnotatedSentence]) -> Result<EvalReport> {
    if gold.len() != system.len() {
        return Err(Error::Evaluation(format!(
            "{} gold sentences but {} system sentences",
            gold.len(),
            system.len()
        )));
    }
    let mut wseg = Metric::default();
    let mut ptag = Some(Metric::default());
    let mut uas = Some(Metric::default());
    let mut las = Some(Metric::default());
    let mut sentences = Vec::with_capacity(gold.len());
    for (k, (g, s)) in gold.iter().zip(system).enumerate() {
        let c = score_sentence(g, s).map_err(|e| Error::Evaluation(format!("sentence {}: {e}", k + 1)))?;
        wseg.add(c.wseg);
        for (total, part) in [(&mut ptag, c.ptag), (&mut uas, c.uas), (&mut las, c.las)] {
            match (total.as_mut(), part) {
                (Some(t), Some(p)) => t.add(p),
                _ => *total = None,
            }
        }
        sentences.push(SentenceScores {
            wseg: c.wseg.f1(),
            ptag: c.ptag.map(|m| m.f1()),
            uas: c.uas.map(|m| m.f1()),
            las: c.las.map(|m| m.f1()),
        });
    }
    Ok(EvalReport {
        aligned: wseg.correct,
        wseg,
        ptag,
        uas,
        las,
        sentences,
    })
}

/// Two-sided paired t-test p-value on `n - 1` degrees of freedom. Returns 1
/// when every difference is zero and 0 when the differences are a nonzero
/// constant.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Evaluation(format!(
            "paired t-test needs two equal-length samples of at least 2, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len() as f64;
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if var == 0.0 {
        return Ok(if mean == 0.0 { 1.0 } else { 0.0 });
    }
    let t = mean / (var / n).sqrt();
    let dist = StudentsT::new(0.0, 1.0, n - 1.0).map_err(|e| Error::Evaluation(e.to_string()))?;
    Ok((2.0 * dist.sf(t.abs())).min(1.0))
}

/// Decodes each sentence; empty sentences are skipped with a warning.
pub fn predict(model: &Model, sentences: &[AnnotatedSentence], gold_segmentation: bool) -> Result<Vec<AnnotatedSentence>> {
    let mut out = Vec::with_capacity(sentences.len());
    for (k, s) in sentences.iter().enumerate() {
        if s.is_empty() {
            warn!("skipping empty sentence {}", k + 1);
            continue;
        }
        let p = model.predict(s, gold_segmentation)?;
        if p.repairs > 0 {
            log::debug!("sentence {}: repaired {} segmentation tags", k + 1, p.repairs);
        }
        out.push(p.sentence);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::corpus::read_conllu;

    fn fig1() -> AnnotatedSentence {
        read_conllu(
            "1\tTôi\t_\tPRON\t_\t_\t2\tsub\t_\t_\n\
             2\tlà\t_\tVERB\t_\t_\t0\troot\t_\t_\n\
             3\tsinh_viên\t_\tNOUN\t_\t_\t2\tvmod\t_\t_\n\n",
        )
        .unwrap()
        .remove(0)
    }

    fn segmented(syl: &[&str], spans: &[(usize, usize)]) -> AnnotatedSentence {
        let mut s = AnnotatedSentence::raw(syl.iter().map(|x| x.to_string()).collect());
        s.set_words(spans.iter().map(|&(a, b)| WordSpan::new(a, b)).collect());
        s
    }

    #[test]
    fn split_example() {
        let syl = ["a", "b", "c", "d"];
        let gold = segmented(&syl, &[(0, 0), (1, 1), (2, 3)]);
        let sys = segmented(&syl, &[(0, 0), (1, 1), (2, 2), (3, 3)]);
        assert_eq!(align(&gold, &sys).unwrap(), vec![(0, 0), (1, 1)]);
        let r = evaluate(&[gold], &[sys]).unwrap();
        assert_eq!(r.wseg.precision(), 50.0);
        assert!((r.wseg.recall() - 200.0 / 3.0).abs() < 1e-12);
        assert!((r.wseg.f1() - 400.0 / 7.0).abs() < 1e-12);
        assert_eq!(round2(r.wseg.f1()), 57.14);
        assert!(r.ptag.is_none());
    }

    #[test]
    fn merged_span_aligns_nothing() {
        let syl = ["a", "b", "c"];
        let gold = segmented(&syl, &[(0, 0), (1, 2)]);
        let sys = segmented(&syl, &[(0, 2)]);
        assert!(align(&gold, &sys).unwrap().is_empty());
    }

    #[test]
    fn differing_streams_rejected() {
        let a = segmented(&["a"], &[(0, 0)]);
        let b = segmented(&["b"], &[(0, 0)]);
        assert!(matches!(align(&a, &b), Err(Error::Evaluation(_))));
        assert!(evaluate(&[a.clone()], &[]).is_err());
    }

    #[test]
    fn wrong_label() {
        let gold = fig1();
        let mut sys = gold.clone();
        sys.deprels.as_mut().unwrap()[2] = "sub".into();
        let r = evaluate(&[gold], &[sys]).unwrap();
        assert_eq!(round2(r.uas.unwrap().f1()), 100.0);
        assert_eq!(round2(r.las.unwrap().f1()), 66.67);
        assert_eq!(r.ptag.unwrap().f1(), 100.0);
    }

    #[test]
    fn heads_must_point_at_aligned_words() {
        let gold = fig1();
        // Split "sinh_viên"; "Tôi" still attaches to "là".
        let mut sys = gold.clone();
        sys.set_words(vec![WordSpan::new(0, 0), WordSpan::new(1, 1), WordSpan::new(2, 2), WordSpan::new(3, 3)]);
        sys.pos_tags = Some(vec!["PRON".into(), "VERB".into(), "NOUN".into(), "NOUN".into()]);
        sys.heads = Some(vec![2, 0, 2, 3]);
        sys.deprels = Some(vec!["sub".into(), "root".into(), "vmod".into(), "nmod".into()]);
        let r = evaluate(&[gold], &[sys]).unwrap();
        assert_eq!(r.uas.unwrap().correct, 2);
        assert_eq!(r.wseg.correct, 2);
        let text = r.to_key_values();
        assert!(text.contains("wseg_f1=57.14"));
        assert!(text.contains("uas_f1=57.14"));
        assert!(r.to_string().contains("LAS"));
    }

    #[test]
    fn t_test() {
        let a: Vec<f64> = (0..10).map(|i| i as f64).collect();
        assert_eq!(paired_t_test(&a, &a).unwrap(), 1.0);
        let b: Vec<f64> = a.iter().map(|x| x + 1.0).collect();
        assert!(paired_t_test(&b, &a).unwrap() < 1e-6);
        // Alternating noise around a mean chosen so that t = 2.262 on 9 df.
        let e: Vec<f64> = (0..10).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let sd = (10.0f64 / 9.0).sqrt();
        let c = 2.262 * sd / 10f64.sqrt();
        let d: Vec<f64> = e.iter().map(|x| x + c).collect();
        let p = paired_t_test(&d, &[0.0; 10]).unwrap();
        assert!((p - 0.05).abs() < 5e-4, "p = {p}");
        assert!(paired_t_test(&[1.0], &[2.0]).is_err());
        assert!(paired_t_test(&[1.0, 2.0], &[2.0]).is_err());
    }

    fn arb_sentence() -> impl Strategy<Value = AnnotatedSentence> {
        (1usize..8)
            .prop_flat_map(|n| {
                (
                    prop::collection::vec(1usize..3, n),
                    prop::collection::vec(0usize..3, n),
                    Just(n),
                )
            })
            .prop_map(|(lens, tags, n)| {
                let words: Vec<Vec<String>> = lens
                    .iter()
                    .enumerate()
                    .map(|(i, &l)| (0..l).map(|k| format!("s{i}{k}")).collect())
                    .collect();
                let mut s = AnnotatedSentence::from_words(&words);
                s.pos_tags = Some(tags.iter().map(|t| format!("T{t}")).collect());
                // A chain: word 1 is the root's child, each next word hangs on its predecessor.
                s.heads = Some((0..n).collect());
                s.deprels = Some(tags.iter().map(|t| format!("L{t}")).collect());
                s
            })
    }

    proptest! {
        #[test]
        fn self_evaluation_is_perfect(sents in prop::collection::vec(arb_sentence(), 1..5)) {
            let r = evaluate(&sents, &sents).unwrap();
            for m in [Some(r.wseg), r.ptag, r.uas, r.las] {
                prop_assert_eq!(round2(m.unwrap().f1()), 100.0);
            }
        }

        #[test]
        fn wseg_symmetric_and_bounds(a in arb_sentence(), cut in prop::collection::vec(any::<bool>(), 16)) {
            // Re-segment the same syllables at random cut points.
            let m = a.len();
            let mut spans = Vec::new();
            let mut start = 0;
            for i in 0..m {
                if i + 1 == m || cut[i % 16] {
                    spans.push(WordSpan::new(start, i));
                    start = i + 1;
                }
            }
            let mut b = a.unsegmented();
            b.set_words(spans);
            let n = b.words.as_ref().unwrap().len();
            b.pos_tags = Some(vec!["T0".into(); n]);
            b.heads = Some((0..n).collect());
            b.deprels = Some(vec!["L0".into(); n]);
            let ab = evaluate(&[a.clone()], &[b.clone()]).unwrap();
            let ba = evaluate(&[b], &[a]).unwrap();
            prop_assert!((ab.wseg.precision() - ba.wseg.recall()).abs() < 1e-12);
            prop_assert!((ab.wseg.f1() - ba.wseg.f1()).abs() < 1e-12);
            let (uas, las) = (ab.uas.unwrap().f1(), ab.las.unwrap().f1());
            prop_assert!(las <= uas + 1e-12);
            prop_assert!(uas <= ab.wseg.f1() + 1e-12);
            prop_assert!(ab.aligned <= ab.wseg.gold.min(ab.wseg.system));
        }

        #[test]
        fn order_invariant(sents in prop::collection::vec(arb_sentence(), 2..5)) {
            let mut sys = sents.clone();
            for s in &mut sys {
                if let Some(h) = s.heads.as_mut() { h[0] = 0; }
                if let Some(t) = s.pos_tags.as_mut() { t[0] = "X".into(); }
            }
            let a = evaluate(&sents, &sys).unwrap();
            let mut g2 = sents.clone();
            let mut s2 = sys.clone();
            g2.reverse();
            s2.reverse();
            let b = evaluate(&g2, &s2).unwrap();
            prop_assert_eq!(a.wseg, b.wseg);
            prop_assert_eq!(a.ptag, b.ptag);
            prop_assert_eq!(a.las, b.las);
        }
    }
}
