//! Combine decoder pointers with BIO tags into full entity spans, and
//! score predictions against gold triplets.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::data::{Instance, Span};
use crate::decoder::RawTriplet;
use crate::error::{Error, Result};
use crate::tagger::Tag;

/// A fully resolved predicted triplet: relation id plus inclusive spans.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ExtractedTriplet {
    pub relation: usize,
    pub head: Span,
    pub tail: Span,
}

/// Expand a last-token pointer into a full span using the BIO tags:
/// B and O are single-token entities; I walks left to the nearest B
/// (position 0 when no B precedes).
pub fn complete_entity(tags: &[Tag], last_token: usize) -> Span {
    match tags[last_token] {
        Tag::B | Tag::O => (last_token, last_token),
        Tag::I => {
            let mut start = 0;
            for j in (0..last_token).rev() {
                if tags[j] == Tag::B {
                    start = j;
                    break;
                }
            }
            (start, last_token)
        }
    }
}

/// Post-process raw decoder output: drop all-NA slots, complete both
/// entities from the tags, deduplicate (set semantics). Pass
/// `complete=false` to skip span completion (pointer-only spans), which
/// is the ablation without the tagging head.
pub fn assemble(
    raw: &[RawTriplet],
    tags: &[Tag],
    complete: bool,
) -> BTreeSet<ExtractedTriplet> {
    let mut out = BTreeSet::new();
    for t in raw {
        let (Some(rel), Some(head), Some(tail)) = (t.relation, t.head, t.tail) else {
            continue;
        };
        let (head, tail) = if complete {
            (complete_entity(tags, head), complete_entity(tags, tail))
        } else {
            ((head, head), (tail, tail))
        };
        out.insert(ExtractedTriplet {
            relation: rel,
            head,
            tail,
        });
    }
    out
}

/// Gold triplets as a comparable set (relation ids resolved, duplicates
/// removed).
pub fn gold_set(instance: &Instance, relations: &crate::data::Relations) -> BTreeSet<ExtractedTriplet> {
    instance
        .triplets
        .iter()
        .filter_map(|t| {
            relations.id(&t.relation).map(|rel| ExtractedTriplet {
                relation: rel,
                head: t.head,
                tail: t.tail,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    /// A hit needs the relation and both full spans exact.
    Strict,
    /// Last-token-only entity matching, as the original evaluation.
    Relaxed,
}

/// Micro-averaged precision/recall/F1 plus the two subtask F1 scores.
/// The entity subtask scores ordered (head, tail) pairs, since head/tail
/// confusion is exactly what it should surface; the unordered variant is
/// reported alongside for comparison.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EvalReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub relation_f1: f64,
    pub entity_f1: f64,
    pub entity_f1_unordered: f64,
    pub correct: usize,
    pub predicted: usize,
    pub gold: usize,
}

fn prf(correct: usize, predicted: usize, gold: usize) -> (f64, f64, f64) {
    let p = if predicted > 0 {
        correct as f64 / predicted as f64
    } else {
        0.0
    };
    let r = if gold > 0 {
        correct as f64 / gold as f64
    } else {
        0.0
    };
    let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    (p, r, f1)
}

/// Multiset intersection size of two sorted-able lists.
fn multiset_overlap<T: Ord + Clone>(a: &[T], b: &[T]) -> usize {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort();
    b.sort();
    let (mut i, mut j, mut hits) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                hits += 1;
                i += 1;
                j += 1;
            }
        }
    }
    hits
}

fn relaxed_view(set: &BTreeSet<ExtractedTriplet>) -> BTreeSet<(usize, usize, usize)> {
    set.iter()
        .map(|t| (t.relation, t.head.1, t.tail.1))
        .collect()
}

/// Corpus-level evaluation. `predicted` and `gold` are aligned per
/// sentence. Strict: a predicted triplet counts iff relation and both
/// full spans match. Relaxed: only the last tokens of each entity must
/// match. Subtasks are always computed: relation F1 over per-sentence
/// relation-label multisets, entity F1 over ordered (head, tail) span
/// pair multisets (strict spans).
pub fn evaluate(
    predicted: &[BTreeSet<ExtractedTriplet>],
    gold: &[BTreeSet<ExtractedTriplet>],
    mode: EvalMode,
) -> Result<EvalReport> {
    if predicted.len() != gold.len() {
        return Err(Error::invalid(format!(
            "evaluate: {} predicted sentences vs {} gold",
            predicted.len(),
            gold.len()
        )));
    }
    let mut correct = 0;
    let mut n_pred = 0;
    let mut n_gold = 0;
    let mut sub_pred = 0;
    let mut sub_gold = 0;
    let mut rel_correct = 0;
    let mut ent_correct = 0;
    let mut ent_correct_unordered = 0;
    for (p, g) in predicted.iter().zip(gold) {
        match mode {
            EvalMode::Strict => {
                correct += p.intersection(g).count();
                n_pred += p.len();
                n_gold += g.len();
            }
            EvalMode::Relaxed => {
                let pv = relaxed_view(p);
                let gv = relaxed_view(g);
                correct += pv.intersection(&gv).count();
                n_pred += pv.len();
                n_gold += gv.len();
            }
        }
        sub_pred += p.len();
        sub_gold += g.len();
        let p_rels: Vec<usize> = p.iter().map(|t| t.relation).collect();
        let g_rels: Vec<usize> = g.iter().map(|t| t.relation).collect();
        rel_correct += multiset_overlap(&p_rels, &g_rels);
        let p_ents: Vec<(Span, Span)> = p.iter().map(|t| (t.head, t.tail)).collect();
        let g_ents: Vec<(Span, Span)> = g.iter().map(|t| (t.head, t.tail)).collect();
        ent_correct += multiset_overlap(&p_ents, &g_ents);
        let unordered = |pairs: &[(Span, Span)]| -> Vec<(Span, Span)> {
            pairs
                .iter()
                .map(|&(a, b)| if a <= b { (a, b) } else { (b, a) })
                .collect()
        };
        ent_correct_unordered += multiset_overlap(&unordered(&p_ents), &unordered(&g_ents));
    }
    let (precision, recall, f1) = prf(correct, n_pred, n_gold);
    let (_, _, relation_f1) = prf(rel_correct, sub_pred, sub_gold);
    let (_, _, entity_f1) = prf(ent_correct, sub_pred, sub_gold);
    let (_, _, entity_f1_unordered) = prf(ent_correct_unordered, sub_pred, sub_gold);
    Ok(EvalReport {
        precision,
        recall,
        f1,
        relation_f1,
        entity_f1,
        entity_f1_unordered,
        correct,
        predicted: n_pred,
        gold: n_gold,
    })
}

/// Just the two subtask scores: relation F1 over label multisets and
/// entity F1 over ordered (head, tail) span pairs.
pub fn subtask_eval(
    predicted: &[BTreeSet<ExtractedTriplet>],
    gold: &[BTreeSet<ExtractedTriplet>],
) -> Result<(f64, f64)> {
    let report = evaluate(predicted, gold, EvalMode::Strict)?;
    Ok((report.relation_f1, report.entity_f1))
}

/// Span-set F1 of predicted BIO tags against gold tags, micro-averaged
/// (the tagging head's own quality measure).
pub fn span_f1(predicted_tags: &[Vec<Tag>], gold_tags: &[Vec<Tag>]) -> f64 {
    let mut correct = 0;
    let mut n_pred = 0;
    let mut n_gold = 0;
    for (p, g) in predicted_tags.iter().zip(gold_tags) {
        let ps = crate::data::spans_from_tags(p);
        let gs = crate::data::spans_from_tags(g);
        correct += ps.intersection(&gs).count();
        n_pred += ps.len();
        n_gold += gs.len();
    }
    prf(correct, n_pred, n_gold).2
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tags(s: &str) -> Vec<Tag> {
        s.chars()
            .map(|c| match c {
                'B' => Tag::B,
                'I' => Tag::I,
                _ => Tag::O,
            })
            .collect()
    }

    #[test]
    fn complete_entity_three_rules() {
        let t = tags("BIOBO");
        assert_eq!(complete_entity(&t, 1), (0, 1)); // I walks to B
        assert_eq!(complete_entity(&t, 3), (3, 3)); // B alone
        assert_eq!(complete_entity(&t, 2), (2, 2)); // O alone
    }

    #[test]
    fn complete_entity_malformed_i_walks_to_zero() {
        let t = tags("IIO");
        assert_eq!(complete_entity(&t, 1), (0, 1));
        // span always ends at the pointer
        assert_eq!(complete_entity(&t, 1).1, 1);
    }

    #[test]
    fn complete_entity_idempotent_ends_at_pointer() {
        let t = tags("BIIOB");
        for i in 0..5 {
            let span = complete_entity(&t, i);
            assert_eq!(span.1, i);
            if t[i] != Tag::I {
                assert_eq!(span, (i, i));
            }
        }
    }

    fn raw(rel: usize, head: usize, tail: usize) -> RawTriplet {
        RawTriplet {
            relation: Some(rel),
            head: Some(head),
            tail: Some(tail),
        }
    }

    #[test]
    fn assemble_drops_na_and_dedups() {
        let t = tags("BIOBO");
        let out = assemble(&[RawTriplet::NA, raw(1, 1, 3), raw(1, 1, 3)], &t, true);
        assert_eq!(out.len(), 1);
        let only = out.iter().next().unwrap();
        assert_eq!(only.head, (0, 1));
        assert_eq!(only.tail, (3, 3));
    }

    #[test]
    fn assemble_without_completion_uses_pointers() {
        let t = tags("BIOBO");
        let out = assemble(&[raw(0, 1, 3)], &t, false);
        let only = out.iter().next().unwrap();
        assert_eq!(only.head, (1, 1));
    }

    fn set(triplets: &[(usize, Span, Span)]) -> BTreeSet<ExtractedTriplet> {
        triplets
            .iter()
            .map(|&(relation, head, tail)| ExtractedTriplet {
                relation,
                head,
                tail,
            })
            .collect()
    }

    #[test]
    fn strict_eval_counting() {
        let pred = vec![set(&[(0, (0, 0), (1, 1))])];
        let gold = vec![set(&[(0, (0, 0), (1, 1)), (1, (2, 2), (3, 3))])];
        let r = evaluate(&pred, &gold, EvalMode::Strict).unwrap();
        assert_eq!(r.precision, 1.0);
        assert_eq!(r.recall, 0.5);
        assert!((r.f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_predictions_are_zero() {
        let pred = vec![BTreeSet::new()];
        let gold = vec![set(&[(0, (0, 0), (1, 1))])];
        let r = evaluate(&pred, &gold, EvalMode::Strict).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn last_token_only_wrong_strict_right_relaxed() {
        // gold head spans two tokens; prediction covers only the last
        let pred = vec![set(&[(0, (1, 1), (3, 3))])];
        let gold = vec![set(&[(0, (0, 1), (3, 3))])];
        let strict = evaluate(&pred, &gold, EvalMode::Strict).unwrap();
        let relaxed = evaluate(&pred, &gold, EvalMode::Relaxed).unwrap();
        assert_eq!(strict.correct, 0);
        assert_eq!(relaxed.correct, 1);
        assert!(relaxed.f1 >= strict.f1);
    }

    #[test]
    fn subtask_swapped_entities_hit_relation_miss_entity() {
        let pred = vec![set(&[(0, (3, 3), (0, 0))])]; // head/tail reversed
        let gold = vec![set(&[(0, (0, 0), (3, 3))])];
        let r = evaluate(&pred, &gold, EvalMode::Strict).unwrap();
        assert_eq!(r.f1, 0.0);
        assert_eq!(r.relation_f1, 1.0);
        assert_eq!(r.entity_f1, 0.0); // ordered pair
        assert_eq!(r.entity_f1_unordered, 1.0); // the swap is forgiven
    }

    #[test]
    fn subtask_eval_returns_the_pair() {
        let pred = vec![set(&[(0, (3, 3), (0, 0))])];
        let gold = vec![set(&[(0, (0, 0), (3, 3))])];
        let (rel, ent) = subtask_eval(&pred, &gold).unwrap();
        assert_eq!((rel, ent), (1.0, 0.0));
    }

    #[test]
    fn subtask_all_exact_is_one() {
        let pred = vec![set(&[(0, (0, 0), (1, 1)), (2, (2, 2), (4, 5))])];
        let r = evaluate(&pred, &pred.clone(), EvalMode::Strict).unwrap();
        assert_eq!((r.f1, r.relation_f1, r.entity_f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn subtask_hand_counted_case() {
        // pred: relations {0, 0, 1}, gold: {0, 1, 1}
        // relation multiset overlap = 2; entity pairs overlap = 1
        let pred = vec![set(&[
            (0, (0, 0), (1, 1)),
            (0, (2, 2), (3, 3)),
            (1, (4, 4), (5, 5)),
        ])];
        let gold = vec![set(&[
            (0, (0, 0), (1, 1)),
            (1, (9, 9), (3, 3)),
            (1, (8, 8), (5, 5)),
        ])];
        let r = evaluate(&pred, &gold, EvalMode::Strict).unwrap();
        assert_eq!(r.correct, 1);
        let expect_rel = 2.0 * (2.0 / 3.0) * (2.0 / 3.0) / (4.0 / 3.0);
        assert!((r.relation_f1 - expect_rel).abs() < 1e-12);
        let expect_ent = 2.0 * (1.0 / 3.0) * (1.0 / 3.0) / (2.0 / 3.0);
        assert!((r.entity_f1 - expect_ent).abs() < 1e-12);
    }

    #[test]
    fn strict_bounded_by_subtasks() {
        // a strict hit requires both subtask hits
        let mut rng = crate::numerics::Rng::new(31);
        for _ in 0..50 {
            let mut pred = Vec::new();
            let mut gold = Vec::new();
            for _ in 0..5 {
                let mk = |rng: &mut crate::numerics::Rng| {
                    let k = rng.below(3);
                    set(&(0..k)
                        .map(|_| {
                            let h = rng.below(4);
                            let t = 4 + rng.below(4);
                            (rng.below(2), (h, h), (t, t))
                        })
                        .collect::<Vec<_>>())
                };
                pred.push(mk(&mut rng));
                gold.push(mk(&mut rng));
            }
            let r = evaluate(&pred, &gold, EvalMode::Strict).unwrap();
            assert!(r.f1 <= r.relation_f1 + 1e-12);
            assert!(r.f1 <= r.entity_f1 + 1e-12);
        }
    }

    #[test]
    fn permutation_invariant_over_triplet_order() {
        // sets are unordered by construction; exercise via differing insert order
        let a = set(&[(0, (0, 0), (1, 1)), (1, (2, 2), (3, 3))]);
        let b = set(&[(1, (2, 2), (3, 3)), (0, (0, 0), (1, 1))]);
        assert_eq!(a, b);
    }

    #[test]
    fn length_mismatch_errors() {
        let pred = vec![BTreeSet::new()];
        let gold: Vec<BTreeSet<ExtractedTriplet>> = vec![];
        assert!(evaluate(&pred, &gold, EvalMode::Strict).is_err());
    }

    #[test]
    fn span_f1_basic() {
        let pred = vec![tags("BIOBO"), tags("OOO")];
        let gold = vec![tags("BIOBO"), tags("BOO")];
        // sentence 1: 2/2 spans right; sentence 2: 0 predicted, 1 gold
        let f1 = span_f1(&pred, &gold);
        let expect = 2.0 * 1.0 * (2.0 / 3.0) / (1.0 + 2.0 / 3.0);
        assert!((f1 - expect).abs() < 1e-12);
    }
}
