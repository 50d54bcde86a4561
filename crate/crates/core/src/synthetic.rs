//! Generated corpora with hand-built parses, used by the acceptance runs and
//! the `synth` command.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::corpus::{Document, Fact, Mention, RelationVocab};
use crate::syntax::DepRow;

/// A flat phrase: label, words, and the index of its head word.
struct Phrase {
    label: &'static str,
    words: Vec<String>,
    head: usize,
}

impl Phrase {
    fn new(label: &'static str, words: &[&str]) -> Self {
        Self {
            label,
            words: words.iter().map(|w| w.to_string()).collect(),
            head: words.len() - 1,
        }
    }
}

/// Words, dependency rows and bracketed tree of a sentence made of phrases
/// under one `S`. Phrase heads attach to the head of `root`.
fn build_sentence(phrases: &[Phrase], root: usize) -> (Vec<String>, Vec<DepRow>, String) {
    let mut words = Vec::new();
    let mut head_pos = Vec::new();
    for p in phrases {
        head_pos.push(words.len() + p.head);
        words.extend(p.words.iter().cloned());
    }
    let mut rows = Vec::with_capacity(words.len());
    let mut start = 0;
    for (k, p) in phrases.iter().enumerate() {
        for i in 0..p.words.len() {
            let pos = start + i;
            let head = if pos == head_pos[root] {
                0
            } else if pos == head_pos[k] {
                head_pos[root] + 1
            } else {
                head_pos[k] + 1
            };
            let deprel = if head == 0 { "root" } else { "dep" };
            rows.push(DepRow {
                index: pos + 1,
                word: words[pos].clone(),
                head,
                deprel: deprel.into(),
            });
        }
        start += p.words.len();
    }
    let inner: Vec<String> = phrases
        .iter()
        .map(|p| format!("({} {})", p.label, p.words.join(" ")))
        .collect();
    (words, rows, format!("(S {})", inner.join(" ")))
}

struct DocBuilder {
    doc: Document,
}

impl DocBuilder {
    fn new(doc_id: String, entities: usize) -> Self {
        Self {
            doc: Document {
                doc_id,
                sentences: Vec::new(),
                entities: vec![Vec::new(); entities],
                facts: Vec::new(),
                dep_parses: Vec::new(),
                con_parses: Vec::new(),
            },
        }
    }

    /// Appends a sentence; `mentions` lists `(entity, phrase)` where the
    /// phrase is exactly the mention.
    fn push(&mut self, phrases: &[Phrase], root: usize, mentions: &[(usize, usize)]) -> usize {
        let sent = self.doc.sentences.len();
        let mut offsets = Vec::new();
        let mut at = 0;
        for p in phrases {
            offsets.push(at);
            at += p.words.len();
        }
        for &(e, k) in mentions {
            self.doc.entities[e].push(Mention {
                entity_id: e,
                sent_index: sent,
                start: offsets[k],
                end: offsets[k] + phrases[k].words.len(),
                marker_pos: None,
            });
        }
        let (words, rows, tree) = build_sentence(phrases, root);
        self.doc.sentences.push(words);
        self.doc.dep_parses.push(rows);
        self.doc.con_parses.push(tree);
        sent
    }
}

const NAMES: [&str; 24] = [
    "Ada", "Boris", "Chen", "Dara", "Emil", "Fatou", "Goran", "Hana", "Ivo", "Jun", "Kemal",
    "Lior", "Mira", "Nils", "Oona", "Pavel", "Quinn", "Rosa", "Sami", "Tove", "Umar", "Vera",
    "Wim", "Yara",
];
const FILLER_VERBS: [&str; 5] = ["visited", "mentioned", "noticed", "praised", "met"];
const FILLER_TAILS: [[&str; 2]; 4] = [
    ["last", "year"],
    ["in", "spring"],
    ["at", "noon"],
    ["once", "again"],
];

pub const OVERFIT_RELATIONS: [&str; 3] = ["founded", "advised", "succeeded"];

fn pick_names(rng: &mut ChaCha8Rng, n: usize) -> Vec<&'static str> {
    NAMES.choose_multiple(rng, n).copied().collect()
}

/// Small memorisation corpus: 2–4 sentences and 2–4 entities per document,
/// every fact stated by a trigger verb in its own evidence sentence.
pub fn overfit_corpus(n_docs: usize, seed: u64) -> (RelationVocab, Vec<Document>) {
    let relations = RelationVocab::new(OVERFIT_RELATIONS.iter().map(|s| s.to_string()).collect())
        .expect("distinct labels");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let docs = (0..n_docs)
        .map(|k| {
            let n_sent = rng.gen_range(2..=4);
            let n_ent = rng.gen_range(2..=4);
            let names = pick_names(&mut rng, n_ent);
            let mut b = DocBuilder::new(format!("overfit{k:03}"), n_ent);
            let n_facts = rng.gen_range(1..=n_sent.min(2));
            let mut pairs: Vec<(usize, usize)> = (0..n_ent)
                .flat_map(|s| (0..n_ent).filter(move |&o| o != s).map(move |o| (s, o)))
                .collect();
            pairs.shuffle(&mut rng);
            // the evidence head sees the pair only through its context vector,
            // which is symmetric in subject and object
            let mut used: Vec<(usize, usize)> = Vec::new();
            for &(s, o) in &pairs {
                if used.len() == n_facts {
                    break;
                }
                if used.contains(&(o, s)) {
                    continue;
                }
                used.push((s, o));
                let r = rng.gen_range(0..OVERFIT_RELATIONS.len());
                let phrases = [
                    Phrase::new("NP", &[names[s]]),
                    Phrase::new("VP", &[OVERFIT_RELATIONS[r]]),
                    Phrase::new("NP", &[names[o]]),
                ];
                let sent = b.push(&phrases, 1, &[(s, 0), (o, 2)]);
                b.doc.facts.push(Fact {
                    s,
                    o,
                    r,
                    evidence: [sent].into(),
                });
            }
            // filler sentences mention every entity at least once
            let mut unmentioned: Vec<usize> = (0..n_ent)
                .filter(|&e| b.doc.entities[e].is_empty())
                .collect();
            while b.doc.sentences.len() < n_sent || !unmentioned.is_empty() {
                let e = unmentioned.pop().unwrap_or_else(|| rng.gen_range(0..n_ent));
                let verb = FILLER_VERBS[rng.gen_range(0..FILLER_VERBS.len())];
                let tail = FILLER_TAILS[rng.gen_range(0..FILLER_TAILS.len())];
                let phrases = [
                    Phrase::new("NP", &["the", "press"]),
                    Phrase::new("VP", &[verb]),
                    Phrase::new("NP", &[names[e]]),
                    Phrase::new("PP", &tail),
                ];
                b.push(&phrases, 1, &[(e, 2)]);
            }
            b.doc
        })
        .collect();
    (relations, docs)
}

pub const ABLATION_RELATIONS: [&str; 3] = ["allied", "rivaled", "traded"];
const CUE_ADJ: [&str; 3] = ["red", "green", "blue"];
const CUE_NOUN: [&str; 3] = ["banner", "shield", "lantern"];

/// Documents whose single fact is decided by the pair of cue words inside a
/// noun phrase of an entity-free sentence: relation `(i + j) mod 3` for
/// adjective `i` and noun `j`, so neither word alone is informative. The
/// entity pair sentence uses the same neutral verb everywhere.
pub fn ablation_corpus(n_docs: usize, seed: u64) -> (RelationVocab, Vec<Document>) {
    let relations = RelationVocab::new(ABLATION_RELATIONS.iter().map(|s| s.to_string()).collect())
        .expect("distinct labels");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let docs = (0..n_docs)
        .map(|k| {
            let n_ent = rng.gen_range(2..=3);
            let names = pick_names(&mut rng, n_ent);
            let mut b = DocBuilder::new(format!("ablation{k:03}"), n_ent);
            let (i, j) = (rng.gen_range(0..3), rng.gen_range(0..3));
            let cue = [
                Phrase::new("NP", &["a", CUE_ADJ[i], CUE_NOUN[j]]),
                Phrase::new("VP", &["was", "raised"]),
                Phrase::new("PP", &FILLER_TAILS[rng.gen_range(0..FILLER_TAILS.len())]),
            ];
            let pair = [
                Phrase::new("NP", &[names[0]]),
                Phrase::new("VP", &["met"]),
                Phrase::new("NP", &[names[1]]),
            ];
            let cue_first = rng.gen_bool(0.5);
            if cue_first {
                b.push(&cue, 1, &[]);
            }
            let pair_sent = b.push(&pair, 1, &[(0, 0), (1, 2)]);
            let cue_sent = if cue_first { 0 } else { b.push(&cue, 1, &[]) };
            if n_ent == 3 {
                let verb = FILLER_VERBS[rng.gen_range(0..FILLER_VERBS.len())];
                b.push(
                    &[
                        Phrase::new("NP", &["the", "press"]),
                        Phrase::new("VP", &[verb]),
                        Phrase::new("NP", &[names[2]]),
                    ],
                    1,
                    &[(2, 2)],
                );
            }
            b.doc.facts.push(Fact {
                s: 0,
                o: 1,
                r: (i + j) % 3,
                evidence: [pair_sent, cue_sent].into(),
            });
            b.doc
        })
        .collect();
    (relations, docs)
}

/// Tiny configuration for gradient audits and smoke tests.
pub fn toy_config() -> ModelConfig {
    let mut c = ModelConfig::default();
    c.relations = vec!["founded".into(), "born_in".into()];
    c.encoder.dim = 4;
    c.encoder.vocab_size = 40;
    c.gat.dim = 3;
    c.tree_dim = 3;
    c.fusion_dim = 3;
    c
}

fn chain(words: &[&str]) -> Vec<DepRow> {
    words
        .iter()
        .enumerate()
        .map(|(i, w)| DepRow {
            index: i + 1,
            word: w.to_string(),
            head: i,
            deprel: "dep".into(),
        })
        .collect()
}

/// Two sentences, three entities and two facts with chain dependency parses.
pub fn toy_document() -> Document {
    let s0 = ["Ada", "founded", "Acme", "Labs"];
    let s1 = ["She", "was", "born", "in", "Paris"];
    let m = |e, s, a, b| Mention {
        entity_id: e,
        sent_index: s,
        start: a,
        end: b,
        marker_pos: None,
    };
    Document {
        doc_id: "toy".into(),
        sentences: vec![
            s0.iter().map(|w| w.to_string()).collect(),
            s1.iter().map(|w| w.to_string()).collect(),
        ],
        entities: vec![
            vec![m(0, 0, 0, 1), m(0, 1, 0, 1)],
            vec![m(1, 0, 2, 4)],
            vec![m(2, 1, 4, 5)],
        ],
        facts: vec![
            Fact {
                s: 0,
                o: 1,
                r: 0,
                evidence: [0].into(),
            },
            Fact {
                s: 0,
                o: 2,
                r: 1,
                evidence: [1].into(),
            },
        ],
        dep_parses: vec![chain(&s0), chain(&s1)],
        con_parses: vec![
            "(S (NP Ada) (VP founded (NP Acme Labs)))".into(),
            "(S (NP She) (VP was (VP born (PP in (NP Paris)))))".into(),
        ],
    }
}
