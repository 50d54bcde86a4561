//! Documents, relation facts, parse sidecars and mention marking.
//!
//! A corpus directory holds `corpus.json` plus, per document,
//! `<doc_id>.dep.tsv` (word-level dependency rows) and `<doc_id>.con.txt`
//! (one bracketed constituency tree per sentence).

use std::collections::BTreeSet;
use std::fs;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::syntax::constituency::parse_bracketed;
use crate::syntax::dependency::{parse_dep_tsv, validate_dep_rows, DepRow};
use crate::tokenizer::Tokenizer;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mention {
    pub entity_id: usize,
    pub sent_index: usize,
    /// Half-open word span inside the sentence.
    pub start: usize,
    pub end: usize,
    /// Token index of the `*` preceding the mention, once marked.
    pub marker_pos: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fact {
    pub s: usize,
    pub o: usize,
    /// Index into the relation vocabulary.
    pub r: usize,
    pub evidence: BTreeSet<usize>,
}

#[derive(Clone, Debug)]
pub struct Document {
    pub doc_id: String,
    pub sentences: Vec<Vec<String>>,
    pub entities: Vec<Vec<Mention>>,
    pub facts: Vec<Fact>,
    pub dep_parses: Vec<Vec<DepRow>>,
    pub con_parses: Vec<String>,
}

/// Ordered relation labels; position = relation id.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationVocab(Vec<String>);

impl RelationVocab {
    pub fn new(labels: Vec<String>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for l in &labels {
            if l.is_empty() || !seen.insert(l.as_str()) {
                return Err(Error::Config(format!(
                    "relation vocabulary has an empty or duplicate label {l:?}"
                )));
            }
        }
        Ok(Self(labels))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn id(&self, label: &str) -> Option<usize> {
        self.0.iter().position(|l| l == label)
    }

    pub fn label(&self, id: usize) -> &str {
        &self.0[id]
    }

    pub fn labels(&self) -> &[String] {
        &self.0
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RawMention {
    pub sent: usize,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RawFact {
    pub s: usize,
    pub o: usize,
    pub r: String,
    #[serde(default)]
    pub evidence: Vec<usize>,
}

/// One entry of `corpus.json`.
#[derive(Debug, Serialize, Deserialize)]
pub struct RawDocument {
    pub doc_id: String,
    pub sents: Vec<Vec<String>>,
    pub entities: Vec<Vec<RawMention>>,
    #[serde(default)]
    pub facts: Vec<RawFact>,
}

impl Document {
    fn invalid(&self, reason: impl Into<String>) -> Error {
        Error::InvalidDocument {
            doc_id: self.doc_id.clone(),
            reason: reason.into(),
        }
    }

    /// Checks every document invariant, including parse/sentence agreement.
    pub fn validate(&self) -> Result<()> {
        let n_sent = self.sentences.len();
        if n_sent == 0 {
            return Err(self.invalid("document has no sentences"));
        }
        if let Some(i) = self.sentences.iter().position(Vec::is_empty) {
            return Err(self.invalid(format!("sentence {i} is empty")));
        }
        for (e, mentions) in self.entities.iter().enumerate() {
            if mentions.is_empty() {
                return Err(self.invalid(format!("entity {e} has no mentions")));
            }
            for m in mentions {
                let ok = m.entity_id == e
                    && m.sent_index < n_sent
                    && m.start < m.end
                    && m.end <= self.sentences[m.sent_index].len();
                if !ok {
                    return Err(
                        self.invalid(format!("entity {e} has an invalid mention span {m:?}"))
                    );
                }
            }
        }
        for f in &self.facts {
            if f.s == f.o || f.s >= self.entities.len() || f.o >= self.entities.len() {
                return Err(self.invalid(format!("fact ({}, {}) has invalid entities", f.s, f.o)));
            }
            if let Some(&bad) = f.evidence.iter().find(|&&i| i >= n_sent) {
                return Err(self.invalid(format!("evidence sentence {bad} out of range")));
            }
        }
        if self.dep_parses.len() != n_sent || self.con_parses.len() != n_sent {
            return Err(self.invalid(format!(
                "{} sentences but {} dependency and {} constituency parses",
                n_sent,
                self.dep_parses.len(),
                self.con_parses.len()
            )));
        }
        for (i, words) in self.sentences.iter().enumerate() {
            validate_dep_rows(&self.dep_parses[i], words)
                .map_err(|e| self.invalid(format!("sentence {i}: {e}")))?;
            let tree = parse_bracketed(&self.con_parses[i])
                .map_err(|e| self.invalid(format!("sentence {i}: {e}")))?;
            if tree.leaf_count() != words.len() {
                return Err(Error::LeafCountMismatch {
                    doc_id: self.doc_id.clone(),
                    sentence: i,
                    leaves: tree.leaf_count(),
                    words: words.len(),
                });
            }
        }
        Ok(())
    }

    /// Surface string of a mention.
    pub fn mention_text(&self, m: &Mention) -> String {
        self.sentences[m.sent_index][m.start..m.end].join(" ")
    }

    pub fn from_raw(
        raw: RawDocument,
        relations: &RelationVocab,
        dep_parses: Vec<Vec<DepRow>>,
        con_parses: Vec<String>,
    ) -> Result<Self> {
        let entities = raw
            .entities
            .into_iter()
            .enumerate()
            .map(|(e, ms)| {
                ms.into_iter()
                    .map(|m| Mention {
                        entity_id: e,
                        sent_index: m.sent,
                        start: m.start,
                        end: m.end,
                        marker_pos: None,
                    })
                    .collect()
            })
            .collect();
        let mut facts: Vec<Fact> = Vec::new();
        for f in raw.facts {
            let r = relations.id(&f.r).ok_or_else(|| Error::UnknownRelation {
                doc_id: raw.doc_id.clone(),
                label: f.r.clone(),
            })?;
            let evidence: BTreeSet<usize> = f.evidence.into_iter().collect();
            match facts
                .iter_mut()
                .find(|g| g.s == f.s && g.o == f.o && g.r == r)
            {
                Some(existing) => existing.evidence.extend(evidence),
                None => facts.push(Fact {
                    s: f.s,
                    o: f.o,
                    r,
                    evidence,
                }),
            }
        }
        let doc = Self {
            doc_id: raw.doc_id,
            sentences: raw.sents,
            entities,
            facts,
            dep_parses,
            con_parses,
        };
        doc.validate()?;
        Ok(doc)
    }

    pub fn to_raw(&self, relations: &RelationVocab) -> RawDocument {
        RawDocument {
            doc_id: self.doc_id.clone(),
            sents: self.sentences.clone(),
            entities: self
                .entities
                .iter()
                .map(|ms| {
                    ms.iter()
                        .map(|m| RawMention {
                            sent: m.sent_index,
                            start: m.start,
                            end: m.end,
                        })
                        .collect()
                })
                .collect(),
            facts: self
                .facts
                .iter()
                .map(|f| RawFact {
                    s: f.s,
                    o: f.o,
                    r: relations.label(f.r).to_string(),
                    evidence: f.evidence.iter().copied().collect(),
                })
                .collect(),
        }
    }
}

/// Loads `corpus.json` and the per-document sidecars from `dir`.
pub fn load_corpus(dir: &Path, relations: &RelationVocab) -> Result<Vec<Document>> {
    let corpus_path = dir.join("corpus.json");
    let text = fs::read_to_string(&corpus_path).map_err(|e| Error::io(&corpus_path, e))?;
    let raw: Vec<RawDocument> = serde_json::from_str(&text).map_err(|e| Error::Json {
        path: corpus_path.clone(),
        source: e,
    })?;
    raw.into_iter()
        .map(|r| {
            let dep_path = dir.join(format!("{}.dep.tsv", r.doc_id));
            let con_path = dir.join(format!("{}.con.txt", r.doc_id));
            let read_sidecar = |p: &Path| -> Result<String> {
                if !p.is_file() {
                    return Err(Error::MissingSidecar {
                        doc_id: r.doc_id.clone(),
                        path: p.to_path_buf(),
                    });
                }
                fs::read_to_string(p).map_err(|e| Error::io(p, e))
            };
            let dep_text = read_sidecar(&dep_path)?;
            let con_text = read_sidecar(&con_path)?;
            let dep = parse_dep_tsv(&dep_text).map_err(|e| Error::InvalidDocument {
                doc_id: r.doc_id.clone(),
                reason: e.to_string(),
            })?;
            let con = con_text
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(String::from)
                .collect();
            Document::from_raw(r, relations, dep, con)
        })
        .collect()
}

/// Writes documents in the on-disk corpus layout read by [`load_corpus`].
pub fn write_corpus(dir: &Path, docs: &[Document], relations: &RelationVocab) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let raw: Vec<RawDocument> = docs.iter().map(|d| d.to_raw(relations)).collect();
    let path = dir.join("corpus.json");
    let json = serde_json::to_string_pretty(&raw).map_err(|e| Error::Json {
        path: path.clone(),
        source: e,
    })?;
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    for d in docs {
        let dep: Vec<String> = d
            .dep_parses
            .iter()
            .map(|rows| {
                rows.iter()
                    .map(|r| format!("{}\t{}\t{}\t{}\n", r.index, r.word, r.head, r.deprel))
                    .collect::<String>()
            })
            .collect();
        let p = dir.join(format!("{}.dep.tsv", d.doc_id));
        fs::write(&p, dep.join("\n")).map_err(|e| Error::io(&p, e))?;
        let p = dir.join(format!("{}.con.txt", d.doc_id));
        fs::write(&p, d.con_parses.join("\n") + "\n").map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

/// Per sentence, word index → ordered document-level token indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AlignmentMap(pub Vec<Vec<Vec<usize>>>);

impl AlignmentMap {
    pub fn sentence(&self, i: usize) -> &[Vec<usize>] {
        &self.0[i]
    }
}

/// A document after marker insertion and subword tokenization.
#[derive(Clone, Debug)]
pub struct MarkedDocument {
    pub tokens: Vec<String>,
    pub token_ids: Vec<usize>,
    pub is_marker: Vec<bool>,
    pub mentions: Vec<Vec<Mention>>,
    pub alignment: AlignmentMap,
    pub sentence_bounds: Vec<Range<usize>>,
}

fn crosses(a: &Mention, b: &Mention) -> bool {
    (a.start < b.start && b.start < a.end && a.end < b.end)
        || (b.start < a.start && a.start < b.end && b.end < a.end)
}

/// Inserts `*` before and after every mention and tokenizes words.
///
/// Nested or identical spans are allowed; markers opening at the same word
/// are ordered by `(start asc, end desc)` and close in reverse order.
pub fn insert_mention_markers(doc: &Document, tokenizer: &dyn Tokenizer) -> Result<MarkedDocument> {
    let mut mentions = doc.entities.clone();
    let mut tokens = Vec::new();
    let mut token_ids = Vec::new();
    let mut is_marker = Vec::new();
    let mut alignment = Vec::with_capacity(doc.sentences.len());
    let mut bounds = Vec::with_capacity(doc.sentences.len());

    for (si, words) in doc.sentences.iter().enumerate() {
        // (entity, mention index) of every mention in this sentence
        let mut local: Vec<(usize, usize)> = mentions
            .iter()
            .enumerate()
            .flat_map(|(e, ms)| {
                ms.iter()
                    .enumerate()
                    .filter(|(_, m)| m.sent_index == si)
                    .map(move |(k, _)| (e, k))
            })
            .collect();
        for (i, &(ea, ka)) in local.iter().enumerate() {
            for &(eb, kb) in &local[i + 1..] {
                let (a, b) = (&mentions[ea][ka], &mentions[eb][kb]);
                if crosses(a, b) {
                    return Err(Error::CrossingMentions {
                        doc_id: doc.doc_id.clone(),
                        sentence: si,
                        first: (a.start, a.end),
                        second: (b.start, b.end),
                    });
                }
            }
        }
        local.sort_by_key(|&(e, k)| {
            let m = &mentions[e][k];
            (m.start, std::cmp::Reverse(m.end), e, k)
        });

        let start = tokens.len();
        let mut words_align = Vec::with_capacity(words.len());
        for (w, word) in words.iter().enumerate() {
            let opening: Vec<(usize, usize)> = local
                .iter()
                .copied()
                .filter(|&(e, k)| mentions[e][k].start == w)
                .collect();
            for (e, k) in opening {
                mentions[e][k].marker_pos = Some(tokens.len());
                tokens.push("*".to_string());
                token_ids.push(tokenizer.marker_id());
                is_marker.push(true);
            }
            let pieces = tokenizer.split(word);
            assert!(
                !pieces.is_empty(),
                "tokenizer returned no pieces for {word:?}"
            );
            let mut idx = Vec::with_capacity(pieces.len());
            for p in pieces {
                idx.push(tokens.len());
                token_ids.push(tokenizer.piece_id(&p));
                tokens.push(p);
                is_marker.push(false);
            }
            words_align.push(idx);
            let closing = local
                .iter()
                .rev()
                .filter(|&&(e, k)| mentions[e][k].end == w + 1)
                .count();
            for _ in 0..closing {
                tokens.push("*".to_string());
                token_ids.push(tokenizer.marker_id());
                is_marker.push(true);
            }
        }
        bounds.push(start..tokens.len());
        alignment.push(words_align);
    }

    Ok(MarkedDocument {
        tokens,
        token_ids,
        is_marker,
        mentions,
        alignment: AlignmentMap(alignment),
        sentence_bounds: bounds,
    })
}
