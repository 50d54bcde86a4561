//! Training objectives, threshold-class prediction and benchmark metrics.
//!
//! Relation logits always carry the threshold class in column 0; relation
//! with vocabulary id `r` lives in column `r + 1`.

use std::collections::{BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column of the threshold class in every logit row.
pub const TH: usize = 0;

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` inside the
/// evidence loss.
pub const PROB_CLAMP: f64 = 1e-12;

/// Evidence sentences are reported when their probability exceeds this.
pub const EVIDENCE_THRESHOLD: f64 = 0.5;

fn logsumexp_over(logits: &[f64], members: impl Iterator<Item = usize> + Clone) -> f64 {
    let m = members
        .clone()
        .map(|k| logits[k])
        .fold(f64::NEG_INFINITY, f64::max);
    m + members.map(|k| (logits[k] - m).exp()).sum::<f64>().ln()
}

/// Adaptive-thresholding loss of one logit row and its gradient.
///
/// `positives` are logit columns (never [`TH`]). The first term pushes the
/// threshold above every negative class, the second pushes every positive
/// class above the threshold.
pub fn atl_row(logits: &[f64], positives: &[usize]) -> (f64, Vec<f64>) {
    let n = logits.len();
    let mut is_pos = vec![false; n];
    for &p in positives {
        assert!(p != TH && p < n, "positive class {p} out of range");
        is_pos[p] = true;
    }
    let mut grad = vec![0.0; n];

    let neg_members = (0..n).filter(|&k| !is_pos[k]);
    let lse_neg = logsumexp_over(logits, neg_members.clone());
    let mut loss = lse_neg - logits[TH];
    for k in neg_members {
        grad[k] += (logits[k] - lse_neg).exp();
    }
    grad[TH] -= 1.0;

    if !positives.is_empty() {
        let pos_members = (0..n).filter(|&k| is_pos[k] || k == TH);
        let lse_pos = logsumexp_over(logits, pos_members.clone());
        let count = positives.len() as f64;
        for k in pos_members {
            grad[k] += count * (logits[k] - lse_pos).exp();
        }
        for &p in positives {
            loss += lse_pos - logits[p];
            grad[p] -= 1.0;
        }
    }
    (loss, grad)
}

/// Adaptive-thresholding loss of one pair; see [`atl_row`].
pub fn atl_loss(logits: &[f64], positives: &[usize]) -> f64 {
    atl_row(logits, positives).0
}

/// Summed binary cross-entropy over sentences and its gradient with respect
/// to the probabilities. Clamped probabilities receive zero gradient.
pub fn bce_row(probs: &[f64], targets: &[f64]) -> (f64, Vec<f64>) {
    assert_eq!(probs.len(), targets.len(), "one target per probability");
    let mut loss = 0.0;
    let mut grad = vec![0.0; probs.len()];
    for (i, (&p, &y)) in probs.iter().zip(targets).enumerate() {
        let clamped = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        loss -= y * clamped.ln() + (1.0 - y) * (1.0 - clamped).ln();
        if clamped == p {
            grad[i] = -y / p + (1.0 - y) / (1.0 - p);
        }
    }
    (loss, grad)
}

/// Evidence loss averaged over positive pairs, each pair given as
/// `(probabilities, evidence bits)`. `None` when there are no positive pairs.
pub fn evidence_loss(pairs: &[(Vec<f64>, Vec<f64>)]) -> Option<f64> {
    if pairs.is_empty() {
        return None;
    }
    let total: f64 = pairs.iter().map(|(p, y)| bce_row(p, y).0).sum();
    Some(total / pairs.len() as f64)
}

/// `L_RE + η · L_Evi`; the evidence term is dropped when undefined.
pub fn total_loss(relation_loss: f64, evidence_loss: Option<f64>, eta: f64) -> f64 {
    match evidence_loss {
        Some(e) => relation_loss + eta * e,
        None => relation_loss,
    }
}

/// Relation vocabulary ids whose logit strictly exceeds the threshold logit.
pub fn predict_relations(logits: &[f64]) -> Vec<usize> {
    let th = logits[TH];
    (1..logits.len())
        .filter(|&k| logits[k] > th)
        .map(|k| k - 1)
        .collect()
}

/// A relation fact keyed by document, entity pair and relation id.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FactKey {
    pub doc_id: String,
    pub s: usize,
    pub o: usize,
    pub r: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredFact {
    pub key: FactKey,
    pub evidence: Vec<usize>,
}

/// Per-document facts needed to classify and de-duplicate facts.
#[derive(Clone, Debug, Default)]
pub struct DocIndex {
    /// Sentences containing at least one mention, per entity.
    pub entity_sentences: Vec<BTreeSet<usize>>,
    /// Surface strings of every mention, per entity.
    pub entity_names: Vec<Vec<String>>,
}

impl DocIndex {
    fn is_intra(&self, s: usize, o: usize) -> bool {
        !self.entity_sentences[s].is_disjoint(&self.entity_sentences[o])
    }
}

/// `(subject mention, object mention, relation label)` triples annotated in
/// the training data.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TrainFacts(pub HashSet<(String, String, String)>);

impl TrainFacts {
    fn contains_any(&self, subj: &[String], obj: &[String], relation: &str) -> bool {
        subj.iter().any(|s| {
            obj.iter().any(|o| {
                self.0
                    .contains(&(s.clone(), o.clone(), relation.to_string()))
            })
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

fn f1_of(p: f64, r: f64) -> f64 {
    ratio(2.0 * p * r, p + r)
}

impl Prf {
    fn from_counts(correct: f64, predicted: f64, gold: f64) -> Self {
        let precision = ratio(correct, predicted);
        let recall = ratio(correct, gold);
        Self {
            precision,
            recall,
            f1: f1_of(precision, recall),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Metrics {
    pub relation: Prf,
    pub ign_f1: f64,
    pub intra: Prf,
    pub inter: Prf,
    pub evidence: Prf,
}

#[derive(Serialize)]
struct MetricsJson {
    f1: f64,
    ign_f1: f64,
    intra_f1: f64,
    inter_f1: f64,
    evi_f1: f64,
}

impl Metrics {
    pub fn f1(&self) -> f64 {
        self.relation.f1
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&MetricsJson {
            f1: self.relation.f1,
            ign_f1: self.ign_f1,
            intra_f1: self.intra.f1,
            inter_f1: self.inter.f1,
            evi_f1: self.evidence.f1,
        })
        .expect("metrics serialize")
    }

    pub fn table(&self) -> String {
        let mut out = String::from("metric     precision  recall     f1\n");
        for (name, prf) in [
            ("relation", self.relation),
            ("intra", self.intra),
            ("inter", self.inter),
            ("evidence", self.evidence),
        ] {
            out.push_str(&format!(
                "{name:<10} {:<10.4} {:<10.4} {:.4}\n",
                prf.precision, prf.recall, prf.f1
            ));
        }
        out.push_str(&format!(
            "{:<10} {:<10} {:<10} {:.4}\n",
            "ign", "", "", self.ign_f1
        ));
        out
    }
}

/// Micro-averaged relation and evidence metrics.
///
/// `relations` maps relation ids to labels for the train-overlap check.
pub fn compute_metrics(
    predictions: &[ScoredFact],
    gold: &[ScoredFact],
    train: &TrainFacts,
    docs: &HashMap<String, DocIndex>,
    relations: &[String],
) -> Result<Metrics> {
    let lookup = |k: &FactKey| -> Result<&DocIndex> {
        let doc = docs
            .get(&k.doc_id)
            .ok_or_else(|| Error::Metrics(format!("unknown document {}", k.doc_id)))?;
        let n = doc.entity_sentences.len();
        if k.s >= n || k.o >= n {
            return Err(Error::Metrics(format!(
                "fact {k:?} references an entity outside 0..{n}"
            )));
        }
        if k.r >= relations.len() {
            return Err(Error::Metrics(format!(
                "fact {k:?} references an unknown relation"
            )));
        }
        Ok(doc)
    };

    let gold_map: HashMap<&FactKey, &ScoredFact> = gold.iter().map(|f| (&f.key, f)).collect();
    let mut seen = HashSet::new();

    let (mut correct, mut correct_in_train) = (0.0, 0.0);
    let (mut pred_intra, mut pred_inter, mut correct_intra, mut correct_inter) =
        (0.0, 0.0, 0.0, 0.0);
    let (mut evi_pred, mut evi_correct) = (0.0, 0.0);
    let mut pred_count = 0.0;
    for p in predictions {
        let doc = lookup(&p.key)?;
        if !seen.insert(&p.key) {
            continue;
        }
        pred_count += 1.0;
        let intra = doc.is_intra(p.key.s, p.key.o);
        if intra {
            pred_intra += 1.0;
        } else {
            pred_inter += 1.0;
        }
        evi_pred += p.evidence.len() as f64;
        if let Some(g) = gold_map.get(&p.key) {
            correct += 1.0;
            if intra {
                correct_intra += 1.0;
            } else {
                correct_inter += 1.0;
            }
            let gold_evi: HashSet<_> = g.evidence.iter().collect();
            evi_correct += p.evidence.iter().filter(|e| gold_evi.contains(e)).count() as f64;
            if train.contains_any(
                &doc.entity_names[p.key.s],
                &doc.entity_names[p.key.o],
                &relations[p.key.r],
            ) {
                correct_in_train += 1.0;
            }
        }
    }

    let (mut gold_intra, mut gold_inter, mut evi_gold) = (0.0, 0.0, 0.0);
    for g in gold {
        let doc = lookup(&g.key)?;
        if doc.is_intra(g.key.s, g.key.o) {
            gold_intra += 1.0;
        } else {
            gold_inter += 1.0;
        }
        evi_gold += g.evidence.len() as f64;
    }
    let gold_count = gold_map.len() as f64;

    let relation = Prf::from_counts(correct, pred_count, gold_count);
    let ign_precision = ratio(correct - correct_in_train, pred_count - correct_in_train);
    Ok(Metrics {
        relation,
        ign_f1: f1_of(ign_precision, relation.recall),
        intra: Prf::from_counts(correct_intra, pred_intra, gold_intra),
        inter: Prf::from_counts(correct_inter, pred_inter, gold_inter),
        evidence: Prf::from_counts(evi_correct, evi_pred, evi_gold),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const LN2: f64 = std::f64::consts::LN_2;

    /// Direct evaluation with plain exponentials and no stabilisation.
    fn naive_atl(logits: &[f64], positives: &[usize]) -> f64 {
        let exp: Vec<f64> = logits.iter().map(|x| x.exp()).collect();
        let pos: HashSet<usize> = positives.iter().copied().collect();
        let neg_den: f64 = (0..logits.len())
            .filter(|k| !pos.contains(k))
            .map(|k| exp[k])
            .sum();
        let pos_den: f64 = (0..logits.len())
            .filter(|k| pos.contains(k) || *k == TH)
            .map(|k| exp[k])
            .sum();
        let mut loss = -(exp[TH] / neg_den).ln();
        for &p in positives {
            loss -= (exp[p] / pos_den).ln();
        }
        loss
    }

    #[test]
    fn atl_single_positive_at_tie_is_ln2() {
        assert!((atl_loss(&[0.0, 0.0], &[1]) - LN2).abs() < 1e-15);
    }

    #[test]
    fn atl_single_negative_at_tie_is_ln2() {
        assert!((atl_loss(&[0.0, 0.0], &[]) - LN2).abs() < 1e-15);
    }

    #[test]
    fn atl_saturates_for_confident_positive() {
        assert!(atl_loss(&[0.0, 100.0], &[1]) < 1e-10);
    }

    #[test]
    fn evidence_loss_examples() {
        let s = 3;
        let l = evidence_loss(&[(vec![0.5; s], vec![1.0, 0.0, 1.0])]).unwrap();
        assert!((l - s as f64 * LN2).abs() < 1e-12);
        let l = evidence_loss(&[(vec![0.75], vec![1.0])]).unwrap();
        assert!((l - 0.287_682_072_451_780_9).abs() < 1e-12);
        let l = evidence_loss(&[(vec![1.0, 0.0, 1.0], vec![1.0, 0.0, 1.0])]).unwrap();
        assert!(l <= 3.0 * 1e-11);
        assert!(evidence_loss(&[]).is_none());
    }

    #[test]
    fn total_loss_examples() {
        assert!((total_loss(1.0, Some(2.0), 0.1) - 1.2).abs() < 1e-15);
        assert_eq!(total_loss(1.0, Some(2.0), 0.0), 1.0);
        assert_eq!(total_loss(1.0, None, 0.1), 1.0);
    }

    #[test]
    fn prediction_uses_strict_threshold() {
        assert_eq!(predict_relations(&[0.0, 1.0]), vec![0]);
        assert!(predict_relations(&[0.0, -1.0, -2.0]).is_empty());
        assert!(predict_relations(&[0.0, 0.0]).is_empty());
    }

    fn fact(doc: &str, s: usize, o: usize, r: usize, evidence: Vec<usize>) -> ScoredFact {
        ScoredFact {
            key: FactKey {
                doc_id: doc.into(),
                s,
                o,
                r,
            },
            evidence,
        }
    }

    fn two_entity_docs() -> HashMap<String, DocIndex> {
        let doc = DocIndex {
            entity_sentences: vec![
                BTreeSet::from([0]),
                BTreeSet::from([0]),
                BTreeSet::from([1]),
            ],
            entity_names: vec![vec!["A".into()], vec!["B".into()], vec!["C".into()]],
        };
        HashMap::from([("d".to_string(), doc)])
    }

    fn rels() -> Vec<String> {
        vec!["R0".into(), "R1".into()]
    }

    #[test]
    fn perfect_predictions_score_one() {
        let gold = vec![fact("d", 0, 1, 0, vec![0]), fact("d", 0, 2, 1, vec![1])];
        let m = compute_metrics(
            &gold,
            &gold,
            &TrainFacts::default(),
            &two_entity_docs(),
            &rels(),
        )
        .unwrap();
        assert_eq!(m.relation.f1, 1.0);
        assert_eq!(m.evidence.f1, 1.0);
        assert_eq!(m.intra.f1, 1.0);
        assert_eq!(m.inter.f1, 1.0);
    }

    #[test]
    fn half_correct_gives_half() {
        let gold = vec![fact("d", 0, 1, 0, vec![]), fact("d", 0, 2, 1, vec![])];
        let pred = vec![fact("d", 0, 1, 0, vec![]), fact("d", 1, 0, 0, vec![])];
        let m = compute_metrics(
            &pred,
            &gold,
            &TrainFacts::default(),
            &two_entity_docs(),
            &rels(),
        )
        .unwrap();
        assert_eq!(
            (m.relation.precision, m.relation.recall, m.relation.f1),
            (0.5, 0.5, 0.5)
        );
    }

    #[test]
    fn ign_f1_discounts_train_overlap() {
        let gold = vec![fact("d", 0, 1, 0, vec![]), fact("d", 0, 2, 1, vec![])];
        let train = TrainFacts(HashSet::from([("A".into(), "B".into(), "R0".into())]));
        let m = compute_metrics(&gold, &gold, &train, &two_entity_docs(), &rels()).unwrap();
        assert_eq!(m.relation.recall, 1.0);
        assert_eq!(m.ign_f1, 1.0);
    }

    #[test]
    fn disjoint_sets_score_zero_and_empty_is_zero() {
        let gold = vec![fact("d", 0, 1, 0, vec![])];
        let pred = vec![fact("d", 1, 0, 1, vec![])];
        let m = compute_metrics(
            &pred,
            &gold,
            &TrainFacts::default(),
            &two_entity_docs(),
            &rels(),
        )
        .unwrap();
        assert_eq!(m.relation.f1, 0.0);
        let m = compute_metrics(
            &[],
            &gold,
            &TrainFacts::default(),
            &two_entity_docs(),
            &rels(),
        )
        .unwrap();
        assert_eq!(m.relation.f1, 0.0);
    }

    #[test]
    fn unknown_document_or_entity_is_an_error() {
        let bad_doc = vec![fact("zz", 0, 1, 0, vec![])];
        assert!(compute_metrics(
            &bad_doc,
            &[],
            &TrainFacts::default(),
            &two_entity_docs(),
            &rels()
        )
        .is_err());
        let bad_ent = vec![fact("d", 0, 7, 0, vec![])];
        assert!(compute_metrics(
            &bad_ent,
            &[],
            &TrainFacts::default(),
            &two_entity_docs(),
            &rels()
        )
        .is_err());
    }

    #[test]
    fn intra_and_inter_partition_gold() {
        let gold = vec![
            fact("d", 0, 1, 0, vec![]),
            fact("d", 0, 2, 1, vec![]),
            fact("d", 2, 1, 1, vec![]),
        ];
        let pred = vec![fact("d", 0, 1, 0, vec![])];
        let m = compute_metrics(
            &pred,
            &gold,
            &TrainFacts::default(),
            &two_entity_docs(),
            &rels(),
        )
        .unwrap();
        // one intra gold fact, two inter
        assert_eq!(m.intra.recall, 1.0);
        assert_eq!(m.inter.recall, 0.0);
    }

    fn logits_and_positives() -> impl Strategy<Value = (Vec<f64>, Vec<usize>)> {
        (2usize..=6).prop_flat_map(|n| {
            (
                prop::collection::vec(-5.0f64..5.0, n),
                prop::collection::vec(any::<bool>(), n - 1),
            )
                .prop_map(|(logits, mask)| {
                    let pos = mask
                        .iter()
                        .enumerate()
                        .filter(|(_, &b)| b)
                        .map(|(i, _)| i + 1)
                        .collect();
                    (logits, pos)
                })
        })
    }

    proptest! {
        #[test]
        fn atl_matches_naive_exponentials((logits, pos) in logits_and_positives()) {
            prop_assert!((atl_loss(&logits, &pos) - naive_atl(&logits, &pos)).abs() < 1e-8);
        }

        #[test]
        fn atl_is_shift_invariant((logits, pos) in logits_and_positives(), shift in -50.0f64..50.0) {
            let shifted: Vec<f64> = logits.iter().map(|x| x + shift).collect();
            prop_assert!((atl_loss(&logits, &pos) - atl_loss(&shifted, &pos)).abs() < 1e-8);
            prop_assert!(atl_loss(&logits, &pos) >= 0.0);
        }

        #[test]
        fn prediction_is_shift_invariant(logits in prop::collection::vec(-5i32..5, 2..6), shift in -20i32..20) {
            // Integer-valued logits keep ties exact after shifting.
            let a: Vec<f64> = logits.iter().map(|&x| x as f64).collect();
            let b: Vec<f64> = logits.iter().map(|&x| (x + shift) as f64).collect();
            prop_assert_eq!(predict_relations(&a), predict_relations(&b));
        }

        #[test]
        fn atl_gradient_matches_finite_differences((logits, pos) in logits_and_positives()) {
            let (_, grad) = atl_row(&logits, &pos);
            for k in 0..logits.len() {
                let mut p = logits.clone();
                let mut m = logits.clone();
                p[k] += 1e-6;
                m[k] -= 1e-6;
                let num = (atl_loss(&p, &pos) - atl_loss(&m, &pos)) / 2e-6;
                prop_assert!(crate::gradcheck::relative_error(grad[k], num) < 1e-4);
            }
        }
    }
}
