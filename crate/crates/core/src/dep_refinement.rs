//! Graph attention over dependency graphs and the pooled embeddings built
//! on top of the refined token states.

use rand::Rng;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{ParamGroup, ParamId, ParamStore};
use crate::syntax::DiGraph;

pub const LOCAL_CONTEXT_EPS: f64 = 1e-30;

#[derive(Clone, Debug)]
pub struct GatLayerParams {
    pub w_a1: ParamId,
    pub w_a2: ParamId,
    /// Stored as a `d1 × 1` column.
    pub t: ParamId,
}

#[derive(Clone, Debug)]
pub struct GatParams {
    pub layers: Vec<GatLayerParams>,
    pub leaky_slope: f64,
}

impl GatParams {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        in_dim: usize,
        out_dim: usize,
        layers: usize,
        leaky_slope: f64,
        rng: &mut R,
    ) -> Self {
        let layers = (0..layers)
            .map(|l| {
                let d_in = if l == 0 { in_dim } else { out_dim };
                GatLayerParams {
                    w_a1: store.add_glorot(
                        format!("{prefix}.layer{l}.w_a1"),
                        ParamGroup::Rest,
                        out_dim,
                        d_in,
                        rng,
                    ),
                    w_a2: store.add_glorot(
                        format!("{prefix}.layer{l}.w_a2"),
                        ParamGroup::Rest,
                        out_dim,
                        d_in,
                        rng,
                    ),
                    t: store.add_glorot(
                        format!("{prefix}.layer{l}.t"),
                        ParamGroup::Rest,
                        out_dim,
                        1,
                        rng,
                    ),
                }
            })
            .collect();
        Self {
            layers,
            leaky_slope,
        }
    }
}

/// Per-edge attention over in-neighbourhoods. Returns the new node states
/// and the `E × 1` attention column (edge order of `graph.edges`).
pub fn gat_layer_with_attention(
    tape: &mut Tape<'_>,
    x: Var,
    graph: &DiGraph,
    layer: &GatLayerParams,
    slope: f64,
) -> Result<(Var, Var)> {
    let n = tape.value(x).rows();
    if n != graph.node_count {
        return Err(Error::Graph(format!(
            "{n} node states for a graph of {} nodes",
            graph.node_count
        )));
    }
    graph.check()?;
    let (src, dst): (Vec<usize>, Vec<usize>) = graph.edges.iter().copied().unzip();
    let (w1, w2, t) = (
        tape.param(layer.w_a1),
        tape.param(layer.w_a2),
        tape.param(layer.t),
    );
    let p = tape.matmul_t(x, w1);
    let q = tape.matmul_t(x, w2);
    let p_dst = tape.gather_rows(p, dst.clone());
    let q_src = tape.gather_rows(q, src);
    let pre = tape.add(p_dst, q_src);
    let act = tape.leaky_relu(pre, slope);
    let scores = tape.matmul(act, t);
    let alpha = tape.segment_softmax(scores, dst.clone(), n);
    let msg = tape.mul_col(q_src, alpha);
    Ok((tape.segment_sum(msg, dst, n), alpha))
}

pub fn gat_layer(
    tape: &mut Tape<'_>,
    x: Var,
    graph: &DiGraph,
    layer: &GatLayerParams,
    slope: f64,
) -> Result<Var> {
    Ok(gat_layer_with_attention(tape, x, graph, layer, slope)?.0)
}

/// Stacked layers with a leaky rectifier between them and none after the last.
pub fn gat_stack(tape: &mut Tape<'_>, x: Var, graph: &DiGraph, params: &GatParams) -> Result<Var> {
    let mut h = x;
    for (l, layer) in params.layers.iter().enumerate() {
        if l > 0 {
            h = tape.leaky_relu(h, params.leaky_slope);
        }
        h = gat_layer(tape, h, graph, layer, params.leaky_slope)?;
    }
    Ok(h)
}

#[derive(Clone, Debug)]
pub struct RefinementParams {
    pub gat: GatParams,
    /// `d1 × d`.
    pub w_z: ParamId,
}

impl RefinementParams {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        d: usize,
        d1: usize,
        layers: usize,
        slope: f64,
        rng: &mut R,
    ) -> Self {
        let gat = GatParams::new(store, "dep_gat", d, d1, layers, slope, rng);
        let w_z = store.add_glorot("dep_gat.w_z", ParamGroup::Rest, d1, d, rng);
        Self { gat, w_z }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct RefinedText {
    pub h_dep: Option<Var>,
    pub h_c: Var,
    pub s_dep: Var,
}

/// Refines `h` over the document-level dependency graph. `sentences[i]`
/// lists the token rows of sentence `i`. With `params = None` the module is
/// skipped and `H_c = H`.
pub fn refine_with_dependency(
    tape: &mut Tape<'_>,
    h: Var,
    graph: &DiGraph,
    params: Option<&RefinementParams>,
    sentences: &[Vec<usize>],
) -> Result<RefinedText> {
    let (h_dep, h_c) = match params {
        Some(p) => {
            let h_dep = gat_stack(tape, h, graph, &p.gat)?;
            let w_z = tape.param(p.w_z);
            let delta = tape.matmul(h_dep, w_z);
            (Some(h_dep), tape.add(h, delta))
        }
        None => (None, h),
    };
    let s_dep = sentence_pool(tape, h_c, sentences)?;
    Ok(RefinedText { h_dep, h_c, s_dep })
}

/// Per-sentence log-sum-exp of token rows.
pub fn sentence_pool(tape: &mut Tape<'_>, h: Var, sentences: &[Vec<usize>]) -> Result<Var> {
    if let Some(i) = sentences.iter().position(|s| s.is_empty()) {
        return Err(Error::Input(format!("sentence {i} has no tokens")));
    }
    Ok(tape.segment_logsumexp(h, sentences.to_vec()))
}

/// Entity embeddings, one row per entity: log-sum-exp over the rows at each
/// entity's marker positions.
pub fn pool_entity(tape: &mut Tape<'_>, h_c: Var, marker_rows: &[Vec<usize>]) -> Result<Var> {
    if let Some(e) = marker_rows.iter().position(|m| m.is_empty()) {
        return Err(Error::Input(format!("entity {e} has no mentions")));
    }
    Ok(tape.segment_logsumexp(h_c, marker_rows.to_vec()))
}

/// Token weights for every `(s, o)` pair: `(A_s ⊙ A_o) / (A_s·A_o + ε)`,
/// where `A_e` is the mean of the attention rows listed in `entity_rows[e]`.
pub fn context_weights(
    tape: &mut Tape<'_>,
    a: Var,
    entity_rows: &[Vec<usize>],
    pairs: &[(usize, usize)],
) -> Result<Var> {
    if let Some(e) = entity_rows.iter().position(|m| m.is_empty()) {
        return Err(Error::Input(format!("entity {e} has no attention rows")));
    }
    let flat: Vec<usize> = entity_rows.iter().flatten().copied().collect();
    let seg: Vec<usize> = entity_rows
        .iter()
        .enumerate()
        .flat_map(|(e, r)| std::iter::repeat_n(e, r.len()))
        .collect();
    let rows = tape.gather_rows(a, flat);
    let a_ent = tape.segment_mean(rows, seg, entity_rows.len());
    let a_s = tape.gather_rows(a_ent, pairs.iter().map(|p| p.0).collect());
    let a_o = tape.gather_rows(a_ent, pairs.iter().map(|p| p.1).collect());
    let prod = tape.mul(a_s, a_o);
    let denom = tape.row_sum(prod);
    let denom = tape.add_scalar(denom, LOCAL_CONTEXT_EPS);
    let inv = tape.recip(denom);
    Ok(tape.mul_col(prod, inv))
}

/// Localized context embeddings, one row per pair.
pub fn localized_context(
    tape: &mut Tape<'_>,
    h_c: Var,
    a: Var,
    entity_rows: &[Vec<usize>],
    pairs: &[(usize, usize)],
) -> Result<Var> {
    let w = context_weights(tape, a, entity_rows, pairs)?;
    Ok(tape.matmul(w, h_c))
}
