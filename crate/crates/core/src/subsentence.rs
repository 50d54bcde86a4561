//! Child-sum Tree-LSTM over constituency trees, subsentence extraction and
//! constituency-aware sentence embeddings.

use rand::Rng;

use crate::autograd::{Tape, Var};
use crate::dep_refinement::{gat_stack, GatParams};
use crate::encoder::DocumentEncoder;
use crate::error::{Error, Result};
use crate::params::{ParamGroup, ParamId, ParamStore};
use crate::syntax::{merge_graphs, ConstituencyTree, DiGraph};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct Gate {
    /// `d1 × d`
    pub w: ParamId,
    /// `d1 × d1`
    pub u: ParamId,
    /// `1 × d1`
    pub b: ParamId,
}

#[derive(Clone, Debug)]
pub struct TreeLstmParams {
    pub input: Gate,
    pub output: Gate,
    pub update: Gate,
    pub forget: Gate,
}

impl TreeLstmParams {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, d: usize, d1: usize, rng: &mut R) -> Self {
        let mut gate = |name: &str| Gate {
            w: store.add_glorot(format!("tree.{name}.w"), ParamGroup::Rest, d1, d, rng),
            u: store.add_glorot(format!("tree.{name}.u"), ParamGroup::Rest, d1, d1, rng),
            b: store.add_zeros(format!("tree.{name}.b"), ParamGroup::Rest, 1, d1),
        };
        Self {
            input: gate("input"),
            output: gate("output"),
            update: gate("update"),
            forget: gate("forget"),
        }
    }

    pub fn gates(&self) -> [Gate; 4] {
        [self.input, self.output, self.update, self.forget]
    }
}

/// All constituency trees of one document with node ids shifted into a
/// single global numbering (tree `k` starts at `offsets[k]`).
#[derive(Clone, Debug)]
pub struct Forest {
    pub offsets: Vec<usize>,
    pub sizes: Vec<usize>,
    pub children: Vec<Vec<usize>>,
    /// Global leaf slot of each leaf node (word order, tree after tree).
    pub leaf_slot: Vec<Option<usize>>,
    pub leaf_count: usize,
    /// Nodes grouped by height; leaves are level 0.
    pub levels: Vec<Vec<usize>>,
    /// Global ids of subsentence roots in pre-order, tree after tree.
    pub kept: Vec<usize>,
    /// Parent/child edges both ways plus self-loops.
    pub adjacency: DiGraph,
}

impl Forest {
    pub fn new(trees: &[ConstituencyTree]) -> Result<Self> {
        if trees.is_empty() {
            return Err(Error::Bracket("document has no constituency trees".into()));
        }
        let mut offsets = Vec::with_capacity(trees.len());
        let mut sizes = Vec::with_capacity(trees.len());
        let mut children = Vec::new();
        let mut leaf_slot = Vec::new();
        let mut kept = Vec::new();
        let mut leaf_count = 0;
        for tree in trees {
            let off = children.len();
            offsets.push(off);
            sizes.push(tree.nodes.len());
            let mut slots = vec![None; tree.nodes.len()];
            for &leaf in &tree.leaves {
                if leaf >= tree.nodes.len() || !tree.is_leaf(leaf) {
                    return Err(Error::Bracket(format!(
                        "leaf list names non-leaf node {leaf}"
                    )));
                }
                slots[leaf] = Some(leaf_count);
                leaf_count += 1;
            }
            for (i, n) in tree.nodes.iter().enumerate() {
                if let Some(&c) = n.children.iter().find(|&&c| c >= tree.nodes.len()) {
                    return Err(Error::Bracket(format!(
                        "node {i} has out-of-range child {c}"
                    )));
                }
                if n.children.is_empty() && slots[i].is_none() {
                    return Err(Error::Bracket(format!(
                        "childless node {i} is not a listed leaf"
                    )));
                }
                children.push(n.children.iter().map(|&c| c + off).collect());
            }
            leaf_slot.extend(slots);
            kept.extend(tree.kept_nodes.iter().map(|&k| k + off));
        }
        let levels = height_levels(&children)?;
        let graphs: Vec<DiGraph> = trees.iter().map(ConstituencyTree::adjacency).collect();
        let adjacency = merge_graphs(&graphs)?.as_graph();
        Ok(Self {
            offsets,
            sizes,
            children,
            leaf_slot,
            leaf_count,
            levels,
            kept,
            adjacency,
        })
    }

    pub fn node_count(&self) -> usize {
        self.children.len()
    }

    pub fn tree_count(&self) -> usize {
        self.offsets.len()
    }
}

/// Groups nodes by height. Fails on cycles and on nodes with two parents.
fn height_levels(children: &[Vec<usize>]) -> Result<Vec<Vec<usize>>> {
    let n = children.len();
    let mut parents = vec![0usize; n];
    for ch in children {
        for &c in ch {
            parents[c] += 1;
            if parents[c] > 1 {
                return Err(Error::Bracket(format!("node {c} has more than one parent")));
            }
        }
    }
    let mut pending: Vec<usize> = children.iter().map(Vec::len).collect();
    let mut parent = vec![usize::MAX; n];
    for (p, ch) in children.iter().enumerate() {
        for &c in ch {
            parent[c] = p;
        }
    }
    let mut height = vec![0usize; n];
    let mut frontier: Vec<usize> = (0..n).filter(|&i| pending[i] == 0).collect();
    let mut done = 0;
    let mut levels: Vec<Vec<usize>> = Vec::new();
    while let Some(i) = frontier.pop() {
        done += 1;
        if levels.len() <= height[i] {
            levels.resize(height[i] + 1, Vec::new());
        }
        levels[height[i]].push(i);
        let p = parent[i];
        if p != usize::MAX {
            height[p] = height[p].max(height[i] + 1);
            pending[p] -= 1;
            if pending[p] == 0 {
                frontier.push(p);
            }
        }
    }
    if done != n {
        return Err(Error::Bracket(
            "cyclic child links in constituency tree".into(),
        ));
    }
    for l in &mut levels {
        l.sort_unstable();
    }
    Ok(levels)
}

/// Hidden and cell states, one row per global node.
#[derive(Clone, Copy, Debug)]
pub struct TreeStates {
    pub hidden: Var,
    pub cell: Var,
}

fn affine(tape: &mut Tape<'_>, x: Var, w: ParamId, b: Option<ParamId>) -> Var {
    let wv = tape.param(w);
    let y = tape.matmul_t(x, wv);
    match b {
        Some(b) => {
            let bv = tape.param(b);
            tape.add_row(y, bv)
        }
        None => y,
    }
}

/// Bottom-up sweep, one level at a time. `leaf_inputs` has one row per leaf
/// slot; every non-leaf input is zero.
pub fn tree_lstm_forward(
    tape: &mut Tape<'_>,
    forest: &Forest,
    leaf_inputs: Var,
    params: &TreeLstmParams,
) -> Result<TreeStates> {
    let li = tape.value(leaf_inputs);
    if li.rows() != forest.leaf_count {
        return Err(Error::Bracket(format!(
            "{} leaf inputs for {} leaves",
            li.rows(),
            forest.leaf_count
        )));
    }
    let d = li.cols();
    let zero = tape.leaf(Tensor::zeros(1, d));
    // row `leaf_count` is the zero input of internal nodes
    let inputs = tape.concat_rows(vec![leaf_inputs, zero]);

    let n = forest.node_count();
    let mut row_of = vec![usize::MAX; n];
    let mut acc: Option<(Var, Var)> = None;
    let mut rows = 0;
    for level in &forest.levels {
        let x_idx: Vec<usize> = level
            .iter()
            .map(|&j| forest.leaf_slot[j].unwrap_or(forest.leaf_count))
            .collect();
        let x = tape.gather_rows(inputs, x_idx);

        let mut child_rows = Vec::new();
        let mut child_parent = Vec::new();
        for (k, &j) in level.iter().enumerate() {
            for &c in &forest.children[j] {
                child_rows.push(row_of[c]);
                child_parent.push(k);
            }
        }
        let gate_pre = |tape: &mut Tape<'_>, g: Gate, hsum: Option<Var>| {
            let wx = affine(tape, x, g.w, Some(g.b));
            match hsum {
                Some(h) => {
                    let uh = affine(tape, h, g.u, None);
                    tape.add(wx, uh)
                }
                None => wx,
            }
        };

        let child_states = match (&acc, child_rows.is_empty()) {
            (Some((h_acc, c_acc)), false) => {
                let hc = tape.gather_rows(*h_acc, child_rows.clone());
                let cc = tape.gather_rows(*c_acc, child_rows);
                let hsum = tape.segment_sum_unordered(hc, child_parent.clone(), level.len());
                Some((hc, cc, hsum))
            }
            _ => None,
        };
        let hsum = child_states.map(|s| s.2);
        let i_pre = gate_pre(tape, params.input, hsum);
        let o_pre = gate_pre(tape, params.output, hsum);
        let u_pre = gate_pre(tape, params.update, hsum);
        let i = tape.sigmoid(i_pre);
        let o = tape.sigmoid(o_pre);
        let u = tape.tanh(u_pre);
        let mut c = tape.mul(i, u);
        if let Some((hc, cc, _)) = child_states {
            let wx = affine(tape, x, params.forget.w, Some(params.forget.b));
            let wx_per_child = tape.gather_rows(wx, child_parent.clone());
            let uh = affine(tape, hc, params.forget.u, None);
            let f_pre = tape.add(wx_per_child, uh);
            let f = tape.sigmoid(f_pre);
            let kept = tape.mul(f, cc);
            let carried = tape.segment_sum_unordered(kept, child_parent, level.len());
            c = tape.add(c, carried);
        }
        let tc = tape.tanh(c);
        let h = tape.mul(o, tc);

        for (k, &j) in level.iter().enumerate() {
            row_of[j] = rows + k;
        }
        rows += level.len();
        acc = Some(match acc {
            None => (h, c),
            Some((ha, ca)) => (tape.concat_rows(vec![ha, h]), tape.concat_rows(vec![ca, c])),
        });
    }
    let (h_acc, c_acc) = acc.expect("forest has at least one node");
    let hidden = tape.gather_rows(h_acc, row_of.clone());
    let cell = tape.gather_rows(c_acc, row_of);
    Ok(TreeStates { hidden, cell })
}

/// Leaf inputs from the encoder's embedding table: per word, the mean of its
/// subword rows. `words[w]` lists the subword ids of leaf slot `w`.
pub fn leaf_inputs(
    tape: &mut Tape<'_>,
    encoder: &dyn DocumentEncoder,
    words: &[Vec<usize>],
) -> Result<Var> {
    if let Some(w) = words.iter().position(Vec::is_empty) {
        return Err(Error::Input(format!("word {w} has no subwords")));
    }
    let ids: Vec<usize> = words.iter().flatten().copied().collect();
    let seg: Vec<usize> = words
        .iter()
        .enumerate()
        .flat_map(|(w, s)| std::iter::repeat_n(w, s.len()))
        .collect();
    let rows = encoder.embedding_rows(tape, ids);
    Ok(tape.segment_mean(rows, seg, words.len()))
}

/// Hidden states of the subsentence roots, or `None` when the document has
/// none.
pub fn collect_subsentences(
    tape: &mut Tape<'_>,
    forest: &Forest,
    states: &TreeStates,
) -> Option<Var> {
    if forest.kept.is_empty() {
        return None;
    }
    Some(tape.gather_rows(states.hidden, forest.kept.clone()))
}

/// Graph attention over tree edges, then the mean of each tree's node
/// outputs. One row per tree (sentence).
pub fn constituency_sentence_embeddings(
    tape: &mut Tape<'_>,
    forest: &Forest,
    states: &TreeStates,
    gat: &GatParams,
) -> Result<Var> {
    let out = gat_stack(tape, states.hidden, &forest.adjacency, gat)?;
    let seg: Vec<usize> = forest
        .sizes
        .iter()
        .enumerate()
        .flat_map(|(t, &n)| std::iter::repeat_n(t, n))
        .collect();
    Ok(tape.segment_mean(out, seg, forest.tree_count()))
}
