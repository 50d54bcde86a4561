//! Contextual token encoders.
//!
//! [`MockEncoder`] is a small trainable transformer: token embeddings plus a
//! fixed sinusoidal position signal, followed by self-attention blocks with
//! a feed-forward sublayer. The token-attention matrix it reports is the
//! mean over heads of one block's attention.

use rand::Rng;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{ParamGroup, ParamId, ParamStore};
use crate::tensor::Tensor;

/// Token representations `h` (`T × d`) and row-stochastic token attention
/// `a` (`T × T`) recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct EncodedDocument {
    pub h: Var,
    pub a: Var,
}

/// Anything that can turn a token-id sequence into [`EncodedDocument`]s.
pub trait DocumentEncoder: Send + Sync {
    fn dim(&self) -> usize;
    fn max_len(&self) -> usize;
    fn encode(&self, tape: &mut Tape<'_>, token_ids: &[usize]) -> Result<EncodedDocument>;
    /// Rows of the input embedding table for the given ids.
    fn embedding_rows(&self, tape: &mut Tape<'_>, token_ids: Vec<usize>) -> Var;
}

#[derive(Clone, Debug, PartialEq)]
pub struct MockEncoderConfig {
    pub vocab_size: usize,
    pub dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub ffn_dim: usize,
    /// Block whose attention is reported; negative counts from the end.
    pub attention_layer: i64,
    pub max_len: usize,
}

impl Default for MockEncoderConfig {
    fn default() -> Self {
        Self {
            vocab_size: 4096,
            dim: 64,
            heads: 2,
            layers: 1,
            ffn_dim: 128,
            attention_layer: -1,
            max_len: 1024,
        }
    }
}

#[derive(Clone, Debug)]
struct BlockParams {
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Clone, Debug)]
pub struct MockEncoder {
    config: MockEncoderConfig,
    attention_block: usize,
    embed: ParamId,
    blocks: Vec<BlockParams>,
}

impl MockEncoder {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        config: MockEncoderConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let c = &config;
        if c.dim == 0 || c.heads == 0 || !c.dim.is_multiple_of(c.heads) {
            return Err(Error::Config(format!(
                "encoder.dim {} must be a positive multiple of {} heads",
                c.dim, c.heads
            )));
        }
        if c.layers == 0 {
            return Err(Error::Config("encoder.layers must be at least 1".into()));
        }
        let layers = c.layers as i64;
        let block = if c.attention_layer < 0 {
            layers + c.attention_layer
        } else {
            c.attention_layer
        };
        if !(0..layers).contains(&block) {
            return Err(Error::Config(format!(
                "encoder.attention_layer {} outside {} layers",
                c.attention_layer, layers
            )));
        }
        let g = ParamGroup::Encoder;
        let bound = (3.0 / c.dim as f64).sqrt();
        let embed = store.add(
            "encoder.embed",
            g,
            Tensor::uniform(c.vocab_size, c.dim, bound, rng),
        );
        let blocks = (0..c.layers)
            .map(|l| {
                let p = |n: &str| format!("encoder.block{l}.{n}");
                BlockParams {
                    wq: store.add_glorot(p("wq"), g, c.dim, c.dim, rng),
                    wk: store.add_glorot(p("wk"), g, c.dim, c.dim, rng),
                    wv: store.add_glorot(p("wv"), g, c.dim, c.dim, rng),
                    wo: store.add_glorot(p("wo"), g, c.dim, c.dim, rng),
                    w1: store.add_glorot(p("w1"), g, c.ffn_dim, c.dim, rng),
                    b1: store.add_zeros(p("b1"), g, 1, c.ffn_dim),
                    w2: store.add_glorot(p("w2"), g, c.dim, c.ffn_dim, rng),
                    b2: store.add_zeros(p("b2"), g, 1, c.dim),
                }
            })
            .collect();
        Ok(Self {
            config,
            attention_block: block as usize,
            embed,
            blocks,
        })
    }

    pub fn config(&self) -> &MockEncoderConfig {
        &self.config
    }

    pub fn embedding_param(&self) -> ParamId {
        self.embed
    }
}

/// Fixed sinusoidal position signal, `len × dim`.
pub fn sinusoidal_positions(len: usize, dim: usize) -> Tensor {
    let mut t = Tensor::zeros(len, dim);
    for pos in 0..len {
        for i in 0..dim {
            let rate = 10000f64.powf((2 * (i / 2)) as f64 / dim as f64);
            let angle = pos as f64 / rate;
            t.set(pos, i, if i % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    t
}

impl DocumentEncoder for MockEncoder {
    fn dim(&self) -> usize {
        self.config.dim
    }

    fn max_len(&self) -> usize {
        self.config.max_len
    }

    fn encode(&self, tape: &mut Tape<'_>, token_ids: &[usize]) -> Result<EncodedDocument> {
        let t = token_ids.len();
        if t == 0 || t > self.config.max_len {
            return Err(Error::Encoder(format!(
                "{t} tokens outside 1..={}",
                self.config.max_len
            )));
        }
        if let Some(&bad) = token_ids.iter().find(|&&i| i >= self.config.vocab_size) {
            return Err(Error::Encoder(format!(
                "token id {bad} outside vocabulary of {}",
                self.config.vocab_size
            )));
        }
        let emb = self.embedding_rows(tape, token_ids.to_vec());
        let pos = tape.leaf(sinusoidal_positions(t, self.config.dim));
        let mut x = tape.add(emb, pos);
        let head_dim = self.config.dim / self.config.heads;
        let scale = 1.0 / (head_dim as f64).sqrt();
        let mut attention = None;
        for (l, b) in self.blocks.iter().enumerate() {
            let (wq, wk, wv, wo) = (
                tape.param(b.wq),
                tape.param(b.wk),
                tape.param(b.wv),
                tape.param(b.wo),
            );
            let q = tape.matmul_t(x, wq);
            let k = tape.matmul_t(x, wk);
            let v = tape.matmul_t(x, wv);
            let mut heads = Vec::with_capacity(self.config.heads);
            let mut probs = Vec::with_capacity(self.config.heads);
            for h in 0..self.config.heads {
                let (lo, hi) = (h * head_dim, (h + 1) * head_dim);
                let qh = tape.slice_cols(q, lo, hi);
                let kh = tape.slice_cols(k, lo, hi);
                let vh = tape.slice_cols(v, lo, hi);
                let scores = tape.matmul_t(qh, kh);
                let scores = tape.scale(scores, scale);
                let p = tape.softmax_rows(scores);
                heads.push(tape.matmul(p, vh));
                probs.push(p);
            }
            if l == self.attention_block {
                let mut sum = probs[0];
                for &p in &probs[1..] {
                    sum = tape.add(sum, p);
                }
                attention = Some(tape.scale(sum, 1.0 / self.config.heads as f64));
            }
            let cat = tape.concat_cols(heads);
            let attn_out = tape.matmul_t(cat, wo);
            x = tape.add(x, attn_out);

            let (w1, b1, w2, b2) = (
                tape.param(b.w1),
                tape.param(b.b1),
                tape.param(b.w2),
                tape.param(b.b2),
            );
            let hdn = tape.matmul_t(x, w1);
            let hdn = tape.add_row(hdn, b1);
            let hdn = tape.relu(hdn);
            let ff = tape.matmul_t(hdn, w2);
            let ff = tape.add_row(ff, b2);
            x = tape.add(x, ff);
        }
        Ok(EncodedDocument {
            h: x,
            a: attention.expect("attention block exists"),
        })
    }

    fn embedding_rows(&self, tape: &mut Tape<'_>, token_ids: Vec<usize>) -> Var {
        let e = tape.param(self.embed);
        tape.gather_rows(e, token_ids)
    }
}

/// Runs `encoder` outside of training and returns plain `(H, A)`.
pub fn encode_document(
    encoder: &dyn DocumentEncoder,
    store: &ParamStore,
    token_ids: &[usize],
) -> Result<(Tensor, Tensor)> {
    let mut tape = Tape::new(store);
    let enc = encoder.encode(&mut tape, token_ids)?;
    Ok((tape.value(enc.h).clone(), tape.value(enc.a).clone()))
}
