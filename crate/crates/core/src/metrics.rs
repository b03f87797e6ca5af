//! Alignment error rate, precision/recall/F1 and error stratification.
//!
//! Corpus scores are micro-averaged: counts are summed over all sentence
//! pairs and the formulas are applied once.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::{GoldAlignment, Link, SentencePair};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalCounts {
    /// |H ∩ S|
    pub h_cap_s: u64,
    /// |H ∩ P|
    pub h_cap_p: u64,
    /// |H|
    pub h: u64,
    /// |S|
    pub s: u64,
}

impl EvalCounts {
    pub fn from_sets(hyp: &BTreeSet<Link>, gold: &GoldAlignment) -> Self {
        let mut c = EvalCounts {
            h: hyp.len() as u64,
            s: gold.sure().len() as u64,
            ..Default::default()
        };
        for link in hyp {
            if gold.sure().contains(link) {
                c.h_cap_s += 1;
            }
            if gold.possible().contains(link) {
                c.h_cap_p += 1;
            }
        }
        c
    }

    fn add(self, o: EvalCounts) -> Self {
        EvalCounts {
            h_cap_s: self.h_cap_s + o.h_cap_s,
            h_cap_p: self.h_cap_p + o.h_cap_p,
            h: self.h + o.h,
            s: self.s + o.s,
        }
    }
}

/// `1 − (|H∩S| + |H∩P|) / (|H| + |S|)`.
pub fn aer(c: &EvalCounts) -> Result<f64> {
    let denom = c.h + c.s;
    if denom == 0 {
        return Err(Error::Undefined("AER with empty hypothesis and empty sure set"));
    }
    Ok(1.0 - (c.h_cap_s + c.h_cap_p) as f64 / denom as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// The hypothesis was empty, so precision was set to 0 by convention.
    pub empty_hypothesis: bool,
}

pub fn prf(c: &EvalCounts) -> Result<Prf> {
    if c.s == 0 {
        return Err(Error::Undefined("recall with an empty sure set"));
    }
    let recall = c.h_cap_s as f64 / c.s as f64;
    let empty_hypothesis = c.h == 0;
    let precision = if empty_hypothesis {
        0.0
    } else {
        c.h_cap_p as f64 / c.h as f64
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(Prf {
        precision,
        recall,
        f1,
        empty_hypothesis,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub aer: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: EvalCounts,
    pub n_pairs: usize,
}

pub fn evaluate_corpus(hyps: &[BTreeSet<Link>], golds: &[GoldAlignment]) -> Result<EvalReport> {
    if hyps.len() != golds.len() {
        return Err(Error::LengthMismatch(format!(
            "{} hypotheses for {} gold alignments",
            hyps.len(),
            golds.len()
        )));
    }
    let counts = hyps
        .iter()
        .zip(golds)
        .map(|(h, g)| EvalCounts::from_sets(h, g))
        .fold(EvalCounts::default(), EvalCounts::add);
    let scores = prf(&counts)?;
    if scores.empty_hypothesis {
        log::warn!("empty hypothesis: precision reported as 0");
    }
    Ok(EvalReport {
        aer: aer(&counts)?,
        precision: scores.precision,
        recall: scores.recall,
        f1: scores.f1,
        counts,
        n_pairs: hyps.len(),
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CategoryCount {
    pub occurrences: u64,
    pub correct: u64,
    /// `100 · correct / occurrences`; `None` when the category never occurs.
    pub percent: Option<f64>,
}

impl CategoryCount {
    fn record(&mut self, correct: bool) {
        self.occurrences += 1;
        self.correct += correct as u64;
    }

    fn finish(&mut self) {
        self.percent = (self.occurrences > 0).then(|| 100.0 * self.correct as f64 / self.occurrences as f64);
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StratReport {
    pub untranslated: CategoryCount,
    pub one_to_many: CategoryCount,
    pub non_contiguous: CategoryCount,
}

impl StratReport {
    /// Fixed-width text table, one row per category.
    pub fn to_table(&self) -> String {
        let mut out = format!("{:<28}{:>12}{:>10}{:>10}\n", "category", "occurrences", "correct", "percent");
        for (name, c) in [
            ("untranslated", &self.untranslated),
            ("one-to-many", &self.one_to_many),
            ("one-to-many non-contiguous", &self.non_contiguous),
        ] {
            let pct = c.percent.map_or("-".to_string(), |p| format!("{p:.2}"));
            out.push_str(&format!("{name:<28}{:>12}{:>10}{pct:>10}\n", c.occurrences, c.correct));
        }
        out
    }
}

impl fmt::Display for StratReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_table())
    }
}

fn is_contiguous(partners: &BTreeSet<usize>) -> bool {
    match (partners.first(), partners.last()) {
        (Some(&a), Some(&b)) => b - a + 1 == partners.len(),
        _ => true,
    }
}

/// Partner sets of every word on one side: `side == 0` groups links by source
/// index, `side == 1` by target index.
fn partners(links: &BTreeSet<Link>, n_words: usize, side: usize) -> Vec<BTreeSet<usize>> {
    let mut out = vec![BTreeSet::new(); n_words];
    for &(i, j) in links {
        let (w, o) = if side == 0 { (i, j) } else { (j, i) };
        if w < n_words {
            out[w].insert(o);
        }
    }
    out
}

/// Counts untranslated, one-to-many and non-contiguous one-to-many words on
/// both sides, using sure links only to define the categories.
pub fn stratify(hyps: &[BTreeSet<Link>], golds: &[GoldAlignment], pairs: &[SentencePair]) -> Result<StratReport> {
    if hyps.len() != golds.len() || golds.len() != pairs.len() {
        return Err(Error::LengthMismatch(format!(
            "{} hypotheses, {} gold alignments, {} sentence pairs",
            hyps.len(),
            golds.len(),
            pairs.len()
        )));
    }
    let mut r = StratReport::default();
    for ((hyp, gold), pair) in hyps.iter().zip(golds).zip(pairs) {
        let (n, m) = (pair.source.len(), pair.target.len());
        gold.check_bounds(n, m)?;
        for (side, len) in [(0, n), (1, m)] {
            let gold_sets = partners(gold.sure(), len, side);
            let hyp_sets = partners(hyp, len, side);
            for (g, h) in gold_sets.iter().zip(&hyp_sets) {
                match g.len() {
                    0 => r.untranslated.record(h.is_empty()),
                    1 => {}
                    _ => {
                        let exact = g == h;
                        r.one_to_many.record(exact);
                        if !is_contiguous(g) {
                            r.non_contiguous.record(exact);
                        }
                    }
                }
            }
        }
    }
    r.untranslated.finish();
    r.one_to_many.finish();
    r.non_contiguous.finish();
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::WordSequence;
    use proptest::prelude::*;

    fn set(links: &[Link]) -> BTreeSet<Link> {
        links.iter().copied().collect()
    }

    fn counts(h: &[Link], s: &[Link], p: &[Link]) -> EvalCounts {
        EvalCounts::from_sets(&set(h), &GoldAlignment::new(s.iter().copied(), p.iter().copied()))
    }

    #[test]
    fn perfect_prediction() {
        let c = counts(&[(0, 0), (1, 2)], &[(0, 0), (1, 2)], &[]);
        assert_eq!(aer(&c).unwrap(), 0.0);
        let s = prf(&c).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn possible_links_count_for_precision() {
        let c = counts(&[(0, 0), (1, 1)], &[(0, 0)], &[(1, 1)]);
        assert_eq!(c, EvalCounts { h_cap_s: 1, h_cap_p: 2, h: 2, s: 1 });
        assert_eq!(aer(&c).unwrap(), 0.0);
    }

    #[test]
    fn empty_prediction() {
        let c = counts(&[], &[(0, 0), (1, 1)], &[]);
        assert_eq!(aer(&c).unwrap(), 1.0);
        let s = prf(&c).unwrap();
        assert!(s.empty_hypothesis);
        assert_eq!((s.precision, s.recall, s.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn disjoint_prediction() {
        let c = counts(&[(2, 2)], &[(0, 0)], &[(1, 1)]);
        let s = prf(&c).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (0.0, 0.0, 0.0));
        assert_eq!(aer(&c).unwrap(), 1.0);
    }

    #[test]
    fn undefined_cases() {
        assert!(matches!(aer(&EvalCounts::default()), Err(Error::Undefined(_))));
        assert!(matches!(prf(&counts(&[(0, 0)], &[], &[])), Err(Error::Undefined(_))));
    }

    #[test]
    fn corpus_length_mismatch() {
        let err = evaluate_corpus(&[BTreeSet::new()], &[]).unwrap_err();
        assert!(matches!(err, Error::LengthMismatch(_)));
    }

    #[test]
    fn single_pair_corpus_matches_pair_scores() {
        let h = set(&[(0, 0), (0, 1), (2, 1)]);
        let g = GoldAlignment::new([(0, 0), (1, 1)], [(2, 1)]);
        let r = evaluate_corpus(std::slice::from_ref(&h), std::slice::from_ref(&g)).unwrap();
        let c = EvalCounts::from_sets(&h, &g);
        assert_eq!(r.counts, c);
        assert_eq!(r.aer, aer(&c).unwrap());
        assert_eq!(r.f1, prf(&c).unwrap().f1);
        assert_eq!(r.n_pairs, 1);
    }

    fn pair(n: usize, m: usize, sure: &[Link]) -> (SentencePair, GoldAlignment) {
        let words = |k: usize| WordSequence::from_words((0..k).map(|i| format!("w{i}"))).unwrap();
        let gold = GoldAlignment::from_sure(sure.iter().copied());
        (SentencePair::new(words(n), words(m), Some(gold.clone())).unwrap(), gold)
    }

    #[test]
    fn non_contiguous_exact_match() {
        let (p, g) = pair(1, 6, &[(0, 2), (0, 3), (0, 5)]);
        let report = |h: &[Link]| stratify(&[set(h)], std::slice::from_ref(&g), std::slice::from_ref(&p)).unwrap();
        let hit = report(&[(0, 2), (0, 3), (0, 5)]);
        assert_eq!((hit.non_contiguous.occurrences, hit.non_contiguous.correct), (1, 1));
        assert_eq!((hit.one_to_many.occurrences, hit.one_to_many.correct), (1, 1));
        let miss = report(&[(0, 2), (0, 3)]);
        assert_eq!((miss.non_contiguous.occurrences, miss.non_contiguous.correct), (1, 0));
        // Target words 0, 1 and 4 have no sure link.
        assert_eq!(hit.untranslated.occurrences, 3);
        assert_eq!(hit.untranslated.correct, 3);
    }

    #[test]
    fn untranslated_requires_empty_prediction() {
        let (p, g) = pair(2, 1, &[(0, 0)]);
        let ok = stratify(&[set(&[(0, 0)])], std::slice::from_ref(&g), std::slice::from_ref(&p)).unwrap();
        assert_eq!((ok.untranslated.occurrences, ok.untranslated.correct), (1, 1));
        assert_eq!(ok.untranslated.percent, Some(100.0));
        assert_eq!(ok.one_to_many.percent, None);
        let bad = stratify(&[set(&[(0, 0), (1, 0)])], std::slice::from_ref(&g), std::slice::from_ref(&p)).unwrap();
        assert_eq!((bad.untranslated.occurrences, bad.untranslated.correct), (1, 0));
    }

    #[test]
    fn table_has_one_row_per_category() {
        let (p, g) = pair(2, 3, &[(0, 0), (0, 2)]);
        let r = stratify(&[set(&[])], &[g], &[p]).unwrap();
        let table = r.to_table();
        assert_eq!(table.lines().count(), 4);
        assert!(table.contains("one-to-many non-contiguous"));
    }

    fn arb_instance() -> impl Strategy<Value = (BTreeSet<Link>, BTreeSet<Link>, BTreeSet<Link>)> {
        let links = || proptest::collection::btree_set((0usize..6, 0usize..6), 0..12);
        (links(), links(), links())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn counts_are_ordered((h, s, p) in arb_instance()) {
            let c = EvalCounts::from_sets(&h, &GoldAlignment::new(s, p));
            prop_assert!(c.h_cap_s <= c.h_cap_p && c.h_cap_p <= c.h && c.h_cap_s <= c.s);
            if c.h + c.s > 0 {
                let a = aer(&c).unwrap();
                prop_assert!((0.0..=1.0).contains(&a));
            }
        }

        #[test]
        fn aer_is_one_minus_f1_when_sure_equals_possible((h, s, _p) in arb_instance()) {
            prop_assume!(!s.is_empty());
            let c = EvalCounts::from_sets(&h, &GoldAlignment::from_sure(s));
            prop_assert!((aer(&c).unwrap() - (1.0 - prf(&c).unwrap().f1)).abs() <= 1e-12);
        }

        #[test]
        fn adding_links_moves_aer_the_right_way((h, s, p) in arb_instance(), extra in (0usize..6, 0usize..6)) {
            let gold = GoldAlignment::new(s, p);
            prop_assume!(!h.contains(&extra));
            let before = EvalCounts::from_sets(&h, &gold);
            prop_assume!(before.h + before.s > 0);
            let mut h2 = h.clone();
            h2.insert(extra);
            let after = aer(&EvalCounts::from_sets(&h2, &gold)).unwrap();
            let before = aer(&before).unwrap();
            if gold.is_sure(extra) {
                prop_assert!(after <= before + 1e-15);
            }
            if !gold.possible().contains(&extra) {
                prop_assert!(after >= before - 1e-15);
            }
        }

        #[test]
        fn duplicating_the_corpus_changes_nothing(items in proptest::collection::vec(arb_instance(), 1..6)) {
            let hyps: Vec<_> = items.iter().map(|(h, _, _)| h.clone()).collect();
            let golds: Vec<_> = items.iter().map(|(_, s, p)| GoldAlignment::new(s.clone(), p.clone())).collect();
            let once = evaluate_corpus(&hyps, &golds);
            let twice = evaluate_corpus(&[hyps.clone(), hyps].concat(), &[golds.clone(), golds].concat());
            match (once, twice) {
                (Ok(a), Ok(b)) => {
                    prop_assert_eq!((a.aer, a.precision, a.recall, a.f1), (b.aer, b.precision, b.recall, b.f1));
                }
                (Err(_), Err(_)) => {}
                _ => prop_assert!(false, "only one of the two evaluations failed"),
            }
        }
    }
}
