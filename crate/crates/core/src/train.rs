//! Optimisation and evaluation loops.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autograd::Tape;
use crate::corpus::{Document, RelationVocab};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::{document_loss, forward_document, predictions, Mode, Model, PreparedDocument};
use crate::objectives::{compute_metrics, DocIndex, Metrics, ScoredFact, TrainFacts};
use crate::params::{ParamGroup, ParamStore};
use crate::tensor::Tensor;

/// Linear warmup followed by linear decay to zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Schedule {
    pub total_steps: usize,
    pub warmup_steps: usize,
}

impl Schedule {
    pub fn new(total_steps: usize, warmup_ratio: f64) -> Self {
        Self {
            total_steps,
            warmup_steps: (total_steps as f64 * warmup_ratio - 1e-9).ceil().max(0.0) as usize,
        }
    }

    /// Multiplier of the peak learning rate at optimizer step `step`
    /// (0-based).
    pub fn factor(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return step as f64 / self.warmup_steps.max(1) as f64;
        }
        let left = self.total_steps.saturating_sub(step) as f64;
        (left / self.total_steps.saturating_sub(self.warmup_steps).max(1) as f64).max(0.0)
    }
}

/// Adam with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: i32,
}

impl AdamW {
    pub fn new(store: &ParamStore, weight_decay: f64) -> Self {
        let zeros: Vec<Tensor> = store
            .iter()
            .map(|(_, p)| Tensor::zeros(p.value.rows(), p.value.cols()))
            .collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    /// One update. Parameters without a gradient still decay and keep
    /// their moment estimates decaying.
    pub fn step(
        &mut self,
        store: &mut ParamStore,
        grads: &[Option<Tensor>],
        lr: impl Fn(ParamGroup) -> f64,
    ) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let k = id.index();
            let rate = lr(store.param(id).group);
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            let value = store.get_mut(id);
            let g = grads.get(k).and_then(Option::as_ref);
            for i in 0..value.len() {
                let gi = g.map_or(0.0, |g| g.data()[i]);
                let mi = self.beta1 * m.data()[i] + (1.0 - self.beta1) * gi;
                let vi = self.beta2 * v.data()[i] + (1.0 - self.beta2) * gi * gi;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                let p = &mut value.data_mut()[i];
                *p -= rate * self.weight_decay * *p;
                *p -= rate * (mi / c1) / ((vi / c2).sqrt() + self.eps);
            }
        }
    }
}

/// Scales gradients so their global norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_grad_norm(grads: &mut [Option<Tensor>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flatten()
        .map(Tensor::norm_sq)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = max_norm / (norm + 1e-6);
        grads.iter_mut().flatten().for_each(|g| g.scale_assign(s));
    }
    norm
}

fn dropout_rng(seed: u64, step: usize, position: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((step as u64) << 20) | position as u64);
    rng
}

/// Loss and summed parameter gradients of one batch. The relation loss is
/// averaged over all pairs of the batch and the evidence loss over its
/// positive pairs; document results are reduced in batch order.
pub fn batch_gradients(
    model: &Model,
    store: &ParamStore,
    batch: &[&PreparedDocument],
    step: usize,
    exec: Execution,
) -> Result<(f64, Vec<Option<Tensor>>)> {
    let pairs: usize = batch.iter().map(|d| d.pairs.len()).sum();
    let positive: usize = batch.iter().map(|d| d.positive_pairs()).sum();
    let re_weight = if pairs > 0 { 1.0 / pairs as f64 } else { 0.0 };
    let evi_weight = if positive > 0 {
        model.config.eta / positive as f64
    } else {
        0.0
    };
    let seed = model.config.seed;
    let per_doc = exec.map(
        batch.len(),
        |i| -> Result<Option<(f64, Vec<Option<Tensor>>)>> {
            let doc = batch[i];
            let mut rng = dropout_rng(seed, step, i);
            let mut tape = Tape::new(store);
            let Some(out) = forward_document(&mut tape, model, doc, Mode::Train(&mut rng))? else {
                return Ok(None);
            };
            let loss = document_loss(&mut tape, doc, &out, re_weight, evi_weight);
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    doc_id: doc.doc_id.clone(),
                    step,
                });
            }
            Ok(Some((value, tape.backward(loss).into_param_grads())))
        },
    );
    let mut total = 0.0;
    let mut grads: Vec<Option<Tensor>> = vec![None; store.len()];
    for r in per_doc {
        let Some((loss, g)) = r? else { continue };
        total += loss;
        for (acc, gi) in grads.iter_mut().zip(g) {
            match (acc.as_mut(), gi) {
                (Some(a), Some(gi)) => a.add_assign(&gi),
                (None, Some(gi)) => *acc = Some(gi),
                _ => {}
            }
        }
    }
    Ok((total, grads))
}

#[derive(Clone, Debug, Serialize)]
pub struct AttentionRecord {
    pub doc_id: String,
    pub s: usize,
    pub o: usize,
    /// `(sentence, word start, word end)` per subsentence.
    pub subsentences: Vec<(usize, usize, usize)>,
    pub beta_subject: Vec<f64>,
    pub beta_object: Vec<f64>,
    pub beta_context: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub metrics: Metrics,
    pub predictions: Vec<ScoredFact>,
    pub attention: Vec<AttentionRecord>,
}

/// Eval-mode forward over `docs`, the threshold rule and the metrics.
pub fn evaluate(
    model: &Model,
    store: &ParamStore,
    docs: &[PreparedDocument],
    train_facts: &TrainFacts,
    exec: Execution,
    keep_attention: bool,
) -> Result<Evaluation> {
    let per_doc = exec.map(
        docs.len(),
        |i| -> Result<(Vec<ScoredFact>, Vec<AttentionRecord>)> {
            let doc = &docs[i];
            let mut tape = Tape::new(store);
            let Some(out) = forward_document(&mut tape, model, doc, Mode::Eval)? else {
                return Ok((Vec::new(), Vec::new()));
            };
            let preds = predictions(doc, tape.value(out.logits), tape.value(out.evidence));
            let mut records = Vec::new();
            if let (true, Some([bs, bo, bc])) = (keep_attention, out.betas) {
                let (bs, bo, bc) = (tape.value(bs), tape.value(bo), tape.value(bc));
                for (p, &(s, o)) in doc.pairs.iter().enumerate() {
                    records.push(AttentionRecord {
                        doc_id: doc.doc_id.clone(),
                        s,
                        o,
                        subsentences: doc.subsentence_spans.clone(),
                        beta_subject: bs.row(p).to_vec(),
                        beta_object: bo.row(p).to_vec(),
                        beta_context: bc.row(p).to_vec(),
                    });
                }
            }
            Ok((preds, records))
        },
    );
    let mut preds = Vec::new();
    let mut attention = Vec::new();
    for r in per_doc {
        let (p, a) = r?;
        preds.extend(p);
        attention.extend(a);
    }
    let gold: Vec<ScoredFact> = docs.iter().flat_map(|d| d.gold.iter().cloned()).collect();
    let index: HashMap<String, DocIndex> = docs
        .iter()
        .map(|d| (d.doc_id.clone(), d.index.clone()))
        .collect();
    let metrics = compute_metrics(&preds, &gold, train_facts, &index, model.relations.labels())?;
    Ok(Evaluation {
        metrics,
        predictions: preds,
        attention,
    })
}

/// `(subject mention, object mention, relation)` for every mention pair of
/// every training fact.
pub fn collect_train_facts(docs: &[Document], relations: &RelationVocab) -> TrainFacts {
    let mut out = TrainFacts::default();
    for doc in docs {
        for f in &doc.facts {
            for ms in &doc.entities[f.s] {
                for mo in &doc.entities[f.o] {
                    out.0.insert((
                        doc.mention_text(ms),
                        doc.mention_text(mo),
                        relations.label(f.r).to_string(),
                    ));
                }
            }
        }
    }
    out
}

#[derive(Clone, Debug)]
pub struct EpochLog {
    pub epoch: usize,
    /// Optimizer steps taken so far.
    pub step: usize,
    pub mean_loss: f64,
    pub dev: Option<Metrics>,
}

#[derive(Clone, Debug)]
/// Best parameters are picked by dev F1, ties broken by evidence F1.
pub struct TrainReport {
    pub schedule: Schedule,
    pub step_losses: Vec<f64>,
    pub epochs: Vec<EpochLog>,
    pub best_epoch: Option<usize>,
    pub best_dev: Option<Metrics>,
    /// Parameters at the best dev F1, or the final ones without dev data.
    pub best_params: ParamStore,
}

#[derive(Default)]
pub struct TrainOptions<'a> {
    pub exec: Execution,
    pub on_epoch: Option<&'a mut dyn FnMut(&EpochLog)>,
}

/// Mini-batch training with per-epoch dev evaluation.
pub fn train(
    model: &Model,
    store: &mut ParamStore,
    train_docs: &[PreparedDocument],
    dev_docs: &[PreparedDocument],
    train_facts: &TrainFacts,
    mut opts: TrainOptions<'_>,
) -> Result<TrainReport> {
    let o = &model.config.optim;
    if train_docs.is_empty() {
        return Err(Error::Config("training corpus is empty".into()));
    }
    let per_epoch = train_docs.len().div_ceil(o.batch_size);
    let mut total = per_epoch * o.epochs;
    if let Some(cap) = o.max_steps {
        total = total.min(cap);
    }
    let schedule = Schedule::new(total, o.warmup_ratio);
    let mut adam = AdamW::new(store, o.weight_decay);
    let mut report = TrainReport {
        schedule,
        step_losses: Vec::with_capacity(total),
        epochs: Vec::new(),
        best_epoch: None,
        best_dev: None,
        best_params: store.clone(),
    };
    let mut order: Vec<usize> = (0..train_docs.len()).collect();
    let mut step = 0;
    let mut epoch = 0;
    while step < total {
        let mut shuffle = ChaCha8Rng::seed_from_u64(model.config.seed);
        shuffle.set_stream((1 << 63) | epoch as u64);
        order.shuffle(&mut shuffle);
        let mut epoch_loss = 0.0;
        let mut epoch_steps = 0;
        for chunk in order.chunks(o.batch_size) {
            if step >= total {
                break;
            }
            let batch: Vec<&PreparedDocument> = chunk.iter().map(|&i| &train_docs[i]).collect();
            let (loss, mut grads) = batch_gradients(model, store, &batch, step, opts.exec)?;
            if let Some(max) = o.max_grad_norm {
                clip_grad_norm(&mut grads, max);
            }
            let f = schedule.factor(step);
            adam.step(store, &grads, |g| match g {
                ParamGroup::Encoder => o.lr_encoder * f,
                ParamGroup::Rest => o.lr_rest * f,
            });
            report.step_losses.push(loss);
            epoch_loss += loss;
            epoch_steps += 1;
            step += 1;
        }
        let dev = if dev_docs.is_empty() {
            None
        } else {
            Some(evaluate(model, store, dev_docs, train_facts, opts.exec, false)?.metrics)
        };
        if let Some(m) = dev {
            if report
                .best_dev
                .is_none_or(|b| (m.f1(), m.evidence.f1) > (b.f1(), b.evidence.f1))
            {
                report.best_dev = Some(m);
                report.best_epoch = Some(epoch);
                report.best_params = store.clone();
            }
        }
        let log = EpochLog {
            epoch,
            step,
            mean_loss: epoch_loss / epoch_steps.max(1) as f64,
            dev,
        };
        if let Some(cb) = opts.on_epoch.as_deref_mut() {
            cb(&log);
        }
        report.epochs.push(log);
        epoch += 1;
    }
    if dev_docs.is_empty() {
        report.best_params = store.clone();
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::prepare_document;

    #[test]
    fn schedule_peaks_after_warmup_and_ends_near_zero() {
        let s = Schedule::new(1000, 0.06);
        assert_eq!(s.warmup_steps, 60);
        assert_eq!(s.factor(0), 0.0);
        assert!((s.factor(30) - 0.5).abs() < 1e-12);
        assert_eq!(s.factor(60), 1.0);
        assert!((s.factor(999) - 1.0 / 940.0).abs() < 1e-15);
        assert_eq!(s.factor(1000), 0.0);
        for k in 60..999 {
            assert!(s.factor(k + 1) < s.factor(k));
        }
    }

    #[test]
    fn adamw_first_step_moves_by_the_learning_rate() {
        let mut store = ParamStore::new();
        let id = store.add("w", ParamGroup::Rest, Tensor::row_vector(&[1.0, -2.0]));
        let mut opt = AdamW::new(&store, 0.0);
        opt.step(
            &mut store,
            &[Some(Tensor::row_vector(&[0.5, -3.0]))],
            |_| 0.1,
        );
        let w = store.get(id);
        assert!((w.data()[0] - 0.9).abs() < 1e-6 && (w.data()[1] + 1.9).abs() < 1e-6);

        let mut store = ParamStore::new();
        let id = store.add("w", ParamGroup::Rest, Tensor::row_vector(&[2.0]));
        let mut opt = AdamW::new(&store, 0.5);
        opt.step(&mut store, &[None], |_| 0.1);
        assert!((store.get(id).item() - 1.9).abs() < 1e-12);
    }

    #[test]
    fn clipping_bounds_the_global_norm() {
        let mut g = vec![
            Some(Tensor::row_vector(&[3.0])),
            None,
            Some(Tensor::row_vector(&[4.0])),
        ];
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        let n: f64 = g.iter().flatten().map(Tensor::norm_sq).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-6);
    }

    #[test]
    fn batch_gradients_do_not_depend_on_scheduling() {
        let (model, store) = Model::new(crate::synthetic::toy_config()).unwrap();
        let prep = prepare_document(&model, &crate::synthetic::toy_document()).unwrap();
        let batch = vec![&prep, &prep, &prep];
        let (la, ga) = batch_gradients(&model, &store, &batch, 3, Execution::Sequential).unwrap();
        let (lb, gb) = batch_gradients(&model, &store, &batch, 3, Execution::default()).unwrap();
        assert_eq!(la.to_bits(), lb.to_bits());
        for (a, b) in ga.iter().zip(&gb) {
            assert_eq!(a, b);
        }
    }
}
