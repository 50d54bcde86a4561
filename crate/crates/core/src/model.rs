//! The assembled model: parameters, per-document preprocessing and the
//! forward pass from token ids to relation logits and evidence scores.

use std::collections::BTreeSet;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Tape, Var};
use crate::config::{EncoderKind, EntityRows, ModelConfig};
use crate::corpus::{insert_mention_markers, Document, RelationVocab};
use crate::dep_refinement::{
    localized_context, pool_entity, refine_with_dependency, GatParams, RefinementParams,
};
use crate::encoder::{DocumentEncoder, MockEncoder, MockEncoderConfig};
use crate::error::{Error, Result};
use crate::fusion::{
    combine_sentence_embeddings, enhance_pair, evidence_probability, relation_logits,
    AttentionDropout, FusionMode, FusionParams, HeadParams, SentenceCombine,
};
use crate::objectives::{predict_relations, DocIndex, FactKey, ScoredFact, EVIDENCE_THRESHOLD};
use crate::params::ParamStore;
use crate::subsentence::{
    collect_subsentences, constituency_sentence_embeddings, leaf_inputs, tree_lstm_forward, Forest,
    TreeLstmParams,
};
use crate::syntax::{build_constituency_tree, build_dependency_graph, merge_graphs, DiGraph};
use crate::tensor::Tensor;
use crate::tokenizer::HashingTokenizer;

/// Longest piece the hashing tokenizer emits.
pub const MAX_PIECE_CHARS: usize = 6;

#[derive(Clone, Debug)]
pub struct ConstituencyParams {
    pub tree: TreeLstmParams,
    pub gat: GatParams,
    pub pair_fusion: FusionParams,
    pub sentence_fusion: FusionParams,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub relations: RelationVocab,
    pub tokenizer: HashingTokenizer,
    pub encoder: MockEncoder,
    pub dependency: Option<RefinementParams>,
    pub constituency: Option<ConstituencyParams>,
    pub head: HeadParams,
}

impl Model {
    /// Builds the model and its freshly initialised parameters. Ablated
    /// modules get no parameters.
    pub fn new(config: ModelConfig) -> Result<(Self, ParamStore)> {
        config.validate()?;
        if config.encoder.kind == EncoderKind::External {
            return Err(Error::Config(
                "encoder.kind = external needs a pretrained encoder adapter, which this build does not ship".into(),
            ));
        }
        let relations = RelationVocab::new(config.relations.clone())?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let e = &config.encoder;
        let encoder = MockEncoder::new(
            &mut store,
            MockEncoderConfig {
                vocab_size: e.vocab_size,
                dim: e.dim,
                heads: e.heads,
                layers: e.layers,
                ffn_dim: 2 * e.dim,
                attention_layer: e.attention_layer,
                max_len: e.max_len,
            },
            &mut rng,
        )?;
        let d = e.dim;
        let g = &config.gat;
        let dependency = (!config.ablate.dependency).then(|| {
            RefinementParams::new(&mut store, d, g.dim, g.layers, g.leaky_slope, &mut rng)
        });
        let constituency = (!config.ablate.constituency).then(|| ConstituencyParams {
            tree: TreeLstmParams::new(&mut store, d, config.tree_dim, &mut rng),
            gat: GatParams::new(
                &mut store,
                "con_gat",
                config.tree_dim,
                g.dim,
                g.layers,
                g.leaky_slope,
                &mut rng,
            ),
            pair_fusion: FusionParams::new(
                &mut store,
                "pair_fusion",
                d,
                config.tree_dim,
                config.fusion_dim,
                &mut rng,
            ),
            sentence_fusion: FusionParams::new(
                &mut store,
                "sentence_fusion",
                d,
                g.dim,
                config.fusion_dim,
                &mut rng,
            ),
        });
        let head = HeadParams::new(&mut store, d, relations.len() + 1, &mut rng);
        let tokenizer = HashingTokenizer::new(e.vocab_size, MAX_PIECE_CHARS);
        Ok((
            Self {
                config,
                relations,
                tokenizer,
                encoder,
                dependency,
                constituency,
                head,
            },
            store,
        ))
    }

    pub fn fusion_mode(&self) -> FusionMode {
        if self.config.ablate.dynamic_fusion {
            FusionMode::Uniform
        } else {
            FusionMode::Attention
        }
    }

    pub fn sentence_mode(&self) -> SentenceCombine {
        if self.config.ablate.dynamic_fusion {
            SentenceCombine::Paired
        } else {
            self.config.sentence_combine
        }
    }
}

/// Everything the forward pass needs from one document, computed once.
#[derive(Clone, Debug)]
pub struct PreparedDocument {
    pub doc_id: String,
    pub token_ids: Vec<usize>,
    pub dependency: DiGraph,
    pub forest: Forest,
    /// Subword ids of each leaf slot (word), sentence after sentence.
    pub leaf_subwords: Vec<Vec<usize>>,
    pub sentence_rows: Vec<Vec<usize>>,
    pub marker_rows: Vec<Vec<usize>>,
    /// Token rows whose attention is averaged per entity.
    pub attention_rows: Vec<Vec<usize>>,
    /// Ordered entity pairs `(s, o)`, `s ≠ o`, sorted by `(s, o)`.
    pub pairs: Vec<(usize, usize)>,
    /// Logit columns of the gold relations of each pair.
    pub positives: Vec<Vec<usize>>,
    /// Evidence bits per sentence for pairs with at least one relation.
    pub evidence_targets: Vec<Option<Vec<f64>>>,
    /// `(sentence, word start, word end)` of each subsentence row.
    pub subsentence_spans: Vec<(usize, usize, usize)>,
    pub gold: Vec<ScoredFact>,
    pub index: DocIndex,
}

impl PreparedDocument {
    pub fn positive_pairs(&self) -> usize {
        self.evidence_targets.iter().filter(|t| t.is_some()).count()
    }
}

pub fn prepare_document(model: &Model, doc: &Document) -> Result<PreparedDocument> {
    doc.validate()?;
    let marked = insert_mention_markers(doc, &model.tokenizer)?;
    let t = marked.token_ids.len();
    if t > model.config.encoder.max_len {
        return Err(Error::DocumentTooLong {
            doc_id: doc.doc_id.clone(),
            tokens: t,
            max: model.config.encoder.max_len,
        });
    }
    let wrap = |e: Error| Error::InvalidDocument {
        doc_id: doc.doc_id.clone(),
        reason: e.to_string(),
    };

    let mut graphs = Vec::with_capacity(doc.sentences.len());
    let mut trees = Vec::with_capacity(doc.sentences.len());
    let mut leaf_subwords = Vec::new();
    let mut spans = Vec::new();
    for (i, bounds) in marked.sentence_bounds.iter().enumerate() {
        let words = marked.alignment.sentence(i);
        graphs.push(
            build_dependency_graph(
                &doc.dep_parses[i],
                words,
                bounds.clone(),
                model.config.dep_bidirectional,
            )
            .map_err(wrap)?,
        );
        let tree = build_constituency_tree(&doc.con_parses[i], words).map_err(wrap)?;
        let word_spans = tree.word_spans();
        spans.extend(
            tree.kept_nodes
                .iter()
                .map(|&k| (i, word_spans[k].0, word_spans[k].1)),
        );
        trees.push(tree);
        leaf_subwords.extend(words.iter().map(|toks| {
            toks.iter()
                .map(|&k| marked.token_ids[k])
                .collect::<Vec<_>>()
        }));
    }
    // sentences are contiguous token ranges, so graph offsets equal sentence starts
    let dependency = merge_graphs(&graphs)?.as_graph();
    let forest = Forest::new(&trees).map_err(wrap)?;

    let sentence_rows: Vec<Vec<usize>> = marked
        .sentence_bounds
        .iter()
        .map(|b| b.clone().collect())
        .collect();
    let marker_rows: Vec<Vec<usize>> = marked
        .mentions
        .iter()
        .map(|ms| {
            ms.iter()
                .map(|m| m.marker_pos.expect("markers inserted"))
                .collect()
        })
        .collect();
    let attention_rows = match model.config.entity_rows {
        EntityRows::Markers => marker_rows.clone(),
        EntityRows::MentionTokens => marked
            .mentions
            .iter()
            .map(|ms| {
                ms.iter()
                    .flat_map(|m| {
                        (m.start..m.end)
                            .flat_map(|w| marked.alignment.sentence(m.sent_index)[w].clone())
                    })
                    .collect()
            })
            .collect(),
    };

    let n = doc.entities.len();
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|s| (0..n).filter(move |&o| o != s).map(move |o| (s, o)))
        .collect();
    let mut positives = vec![Vec::new(); pairs.len()];
    let mut evidence: Vec<Option<BTreeSet<usize>>> = vec![None; pairs.len()];
    let pair_index = |s: usize, o: usize| s * (n - 1) + if o > s { o - 1 } else { o };
    for f in &doc.facts {
        let p = pair_index(f.s, f.o);
        debug_assert_eq!(pairs[p], (f.s, f.o));
        positives[p].push(f.r + 1);
        evidence[p]
            .get_or_insert_with(BTreeSet::new)
            .extend(f.evidence.iter().copied());
    }
    for p in &mut positives {
        p.sort_unstable();
        p.dedup();
    }
    let n_sent = doc.sentences.len();
    let evidence_targets = evidence
        .into_iter()
        .map(|e| {
            e.map(|set| {
                (0..n_sent)
                    .map(|i| if set.contains(&i) { 1.0 } else { 0.0 })
                    .collect()
            })
        })
        .collect();

    let gold = doc
        .facts
        .iter()
        .map(|f| ScoredFact {
            key: FactKey {
                doc_id: doc.doc_id.clone(),
                s: f.s,
                o: f.o,
                r: f.r,
            },
            evidence: f.evidence.iter().copied().collect(),
        })
        .collect();
    let index = DocIndex {
        entity_sentences: doc
            .entities
            .iter()
            .map(|ms| ms.iter().map(|m| m.sent_index).collect())
            .collect(),
        entity_names: doc
            .entities
            .iter()
            .map(|ms| ms.iter().map(|m| doc.mention_text(m)).collect())
            .collect(),
    };

    Ok(PreparedDocument {
        doc_id: doc.doc_id.clone(),
        token_ids: marked.token_ids,
        dependency,
        forest,
        leaf_subwords,
        sentence_rows,
        marker_rows,
        attention_rows,
        pairs,
        positives,
        evidence_targets,
        subsentence_spans: spans,
        gold,
        index,
    })
}

pub enum Mode<'r> {
    Eval,
    /// Training: attention dropout draws from the given generator.
    Train(&'r mut dyn RngCore),
}

#[derive(Clone, Copy, Debug)]
pub struct PairOutputs {
    /// `P × (|R| + 1)`, threshold class in column 0.
    pub logits: Var,
    /// `P × I`.
    pub evidence: Var,
    /// Fusion weights for subject, object and context, each `P × B`.
    pub betas: Option<[Var; 3]>,
}

/// Runs the whole model on one document. Returns `None` for documents with
/// fewer than two entities.
pub fn forward_document(
    tape: &mut Tape<'_>,
    model: &Model,
    doc: &PreparedDocument,
    mode: Mode<'_>,
) -> Result<Option<PairOutputs>> {
    let wrap = |e: Error| match e {
        Error::Input(reason) | Error::Graph(reason) | Error::Bracket(reason) => {
            Error::InvalidDocument {
                doc_id: doc.doc_id.clone(),
                reason,
            }
        }
        other => other,
    };
    let enc = model
        .encoder
        .encode(tape, &doc.token_ids)
        .map_err(|e| match e {
            Error::Encoder(reason) => Error::InvalidDocument {
                doc_id: doc.doc_id.clone(),
                reason,
            },
            other => other,
        })?;
    let refined = refine_with_dependency(
        tape,
        enc.h,
        &doc.dependency,
        model.dependency.as_ref(),
        &doc.sentence_rows,
    )
    .map_err(wrap)?;
    if doc.pairs.is_empty() {
        return Ok(None);
    }

    let rng = match mode {
        Mode::Train(r) => Some(r),
        Mode::Eval => None,
    };
    let rate = model.config.fusion_dropout;

    let syntax = match &model.constituency {
        Some(cp) => {
            let x = leaf_inputs(tape, &model.encoder, &doc.leaf_subwords).map_err(wrap)?;
            let states = tree_lstm_forward(tape, &doc.forest, x, &cp.tree).map_err(wrap)?;
            let n = collect_subsentences(tape, &doc.forest, &states);
            let s_con = constituency_sentence_embeddings(tape, &doc.forest, &states, &cp.gat)
                .map_err(wrap)?;
            Some((cp, n, s_con))
        }
        None => None,
    };

    let entities = pool_entity(tape, refined.h_c, &doc.marker_rows).map_err(wrap)?;
    let e_s = tape.gather_rows(entities, doc.pairs.iter().map(|p| p.0).collect());
    let e_o = tape.gather_rows(entities, doc.pairs.iter().map(|p| p.1).collect());
    let c = localized_context(tape, refined.h_c, enc.a, &doc.attention_rows, &doc.pairs)
        .map_err(wrap)?;

    let (fused, sentences) = match &syntax {
        Some((cp, n, s_con)) => {
            let mut drop = rng.map(|r| AttentionDropout { rate, rng: r });
            let fused = enhance_pair(
                tape,
                e_s,
                e_o,
                c,
                *n,
                &cp.pair_fusion,
                model.fusion_mode(),
                drop.as_mut(),
            );
            let s = combine_sentence_embeddings(
                tape,
                refined.s_dep,
                *s_con,
                &cp.sentence_fusion,
                model.sentence_mode(),
                drop.as_mut(),
            );
            (fused, s)
        }
        None => (
            crate::fusion::EnhancedPair {
                e_s,
                e_o,
                c,
                betas: None,
            },
            refined.s_dep,
        ),
    };
    let logits = relation_logits(
        tape,
        fused.e_s,
        fused.e_o,
        fused.c,
        &model.head,
        model.config.head_block_size,
    );
    let evidence = evidence_probability(tape, sentences, fused.c, &model.head);
    Ok(Some(PairOutputs {
        logits,
        evidence,
        betas: fused.betas,
    }))
}

/// Weighted training loss of one document: the relation loss scaled by
/// `re_weight` plus the evidence loss scaled by `evi_weight`.
pub fn document_loss(
    tape: &mut Tape<'_>,
    doc: &PreparedDocument,
    out: &PairOutputs,
    re_weight: f64,
    evi_weight: f64,
) -> Var {
    let re = tape.atl_loss(out.logits, doc.positives.clone(), re_weight);
    if evi_weight > 0.0 && doc.positive_pairs() > 0 {
        let evi = tape.bce_sum(out.evidence, doc.evidence_targets.clone(), evi_weight);
        tape.add(re, evi)
    } else {
        re
    }
}

/// Facts predicted by the threshold rule, with evidence sentences above 0.5.
pub fn predictions(doc: &PreparedDocument, logits: &Tensor, evidence: &Tensor) -> Vec<ScoredFact> {
    let mut out = Vec::new();
    for (p, &(s, o)) in doc.pairs.iter().enumerate() {
        let ev: Vec<usize> = (0..evidence.cols())
            .filter(|&i| evidence.get(p, i) > EVIDENCE_THRESHOLD)
            .collect();
        for r in predict_relations(logits.row(p)) {
            out.push(ScoredFact {
                key: FactKey {
                    doc_id: doc.doc_id.clone(),
                    s,
                    o,
                    r,
                },
                evidence: ev.clone(),
            });
        }
    }
    out
}
