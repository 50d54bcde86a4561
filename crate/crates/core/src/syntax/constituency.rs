use super::graph::DiGraph;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TreeNode {
    pub label: String,
    pub children: Vec<usize>,
}

/// Ordered labelled tree whose leaves are the words of one sentence.
///
/// Node ids follow pre-order, so the root is always node 0 and every parent
/// precedes its children.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConstituencyTree {
    pub nodes: Vec<TreeNode>,
    pub root: usize,
    /// Leaf node ids in surface order; position = word index.
    pub leaves: Vec<usize>,
    /// Subsentence roots: internal nodes with at least two leaf descendants.
    pub kept_nodes: Vec<usize>,
}

#[derive(Debug, PartialEq)]
enum Tok<'a> {
    Open,
    Close,
    Atom(&'a str),
}

fn lex(s: &str) -> Vec<Tok<'_>> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in s.char_indices() {
        let boundary = c == '(' || c == ')' || c.is_whitespace();
        if boundary {
            if let Some(st) = start.take() {
                out.push(Tok::Atom(&s[st..i]));
            }
            match c {
                '(' => out.push(Tok::Open),
                ')' => out.push(Tok::Close),
                _ => {}
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(st) = start {
        out.push(Tok::Atom(&s[st..]));
    }
    out
}

struct Parser<'a> {
    toks: Vec<Tok<'a>>,
    pos: usize,
    nodes: Vec<TreeNode>,
    leaves: Vec<usize>,
}

impl<'a> Parser<'a> {
    fn node(&mut self, label: &str) -> usize {
        self.nodes.push(TreeNode {
            label: label.to_string(),
            children: Vec::new(),
        });
        self.nodes.len() - 1
    }

    /// Parses a bracketed constituent; `self.pos` sits on its `(`.
    fn constituent(&mut self) -> Result<usize> {
        self.pos += 1;
        let label = match self.toks.get(self.pos) {
            Some(Tok::Atom(a)) => {
                self.pos += 1;
                *a
            }
            _ => "",
        };
        let id = self.node(label);
        loop {
            match self.toks.get(self.pos) {
                Some(Tok::Open) => {
                    let child = self.constituent()?;
                    self.nodes[id].children.push(child);
                }
                Some(Tok::Atom(word)) => {
                    let word = *word;
                    self.pos += 1;
                    let leaf = self.node(word);
                    self.leaves.push(leaf);
                    self.nodes[id].children.push(leaf);
                }
                Some(Tok::Close) => {
                    self.pos += 1;
                    break;
                }
                None => return Err(Error::Bracket("unbalanced brackets: missing ')'".into())),
            }
        }
        if self.nodes[id].children.is_empty() {
            return Err(Error::Bracket(format!(
                "constituent {label:?} has no children"
            )));
        }
        Ok(id)
    }
}

/// Parses a PTB-style bracketed tree such as `(S (NP (NNP Michelle)) (VP (VBZ is)))`.
/// `kept_nodes` is filled in.
pub fn parse_bracketed(text: &str) -> Result<ConstituencyTree> {
    let toks = lex(text);
    if toks.first() != Some(&Tok::Open) {
        return Err(Error::Bracket("tree must start with '('".into()));
    }
    let mut p = Parser {
        toks,
        pos: 0,
        nodes: Vec::new(),
        leaves: Vec::new(),
    };
    let root = p.constituent()?;
    if p.pos != p.toks.len() {
        return Err(Error::Bracket(
            "trailing content after the root constituent".into(),
        ));
    }
    if p.leaves.is_empty() {
        return Err(Error::Bracket("tree has no leaves".into()));
    }
    let mut tree = ConstituencyTree {
        nodes: p.nodes,
        root,
        leaves: p.leaves,
        kept_nodes: Vec::new(),
    };
    tree.kept_nodes = select_subsentence_nodes(&tree);
    Ok(tree)
}

/// Parses `bracketed` and checks that its leaves line up with the sentence's
/// aligned words.
pub fn build_constituency_tree(
    bracketed: &str,
    word_tokens: &[Vec<usize>],
) -> Result<ConstituencyTree> {
    let tree = parse_bracketed(bracketed)?;
    if tree.leaf_count() != word_tokens.len() {
        return Err(Error::Bracket(format!(
            "{} leaves for a sentence of {} words",
            tree.leaf_count(),
            word_tokens.len()
        )));
    }
    Ok(tree)
}

/// Internal nodes with at least two leaf descendants, in pre-order.
pub fn select_subsentence_nodes(tree: &ConstituencyTree) -> Vec<usize> {
    let counts = tree.leaf_counts();
    (0..tree.nodes.len())
        .filter(|&i| !tree.is_leaf(i) && counts[i] >= 2)
        .collect()
}

impl ConstituencyTree {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_leaf(&self, node: usize) -> bool {
        self.nodes[node].children.is_empty()
    }

    /// Word index of a leaf node.
    pub fn leaf_word(&self, node: usize) -> Option<usize> {
        self.leaves.iter().position(|&l| l == node)
    }

    /// Leaf-descendant count of every node.
    pub fn leaf_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.nodes.len()];
        // pre-order ids: children always have larger ids than their parent
        for i in (0..self.nodes.len()).rev() {
            counts[i] = if self.is_leaf(i) {
                1
            } else {
                self.nodes[i].children.iter().map(|&c| counts[c]).sum()
            };
        }
        counts
    }

    /// Half-open word span dominated by each node.
    pub fn word_spans(&self) -> Vec<(usize, usize)> {
        let mut spans = vec![(usize::MAX, 0); self.nodes.len()];
        for (w, &leaf) in self.leaves.iter().enumerate() {
            spans[leaf] = (w, w + 1);
        }
        for i in (0..self.nodes.len()).rev() {
            for &c in &self.nodes[i].children {
                spans[i] = (spans[i].0.min(spans[c].0), spans[i].1.max(spans[c].1));
            }
        }
        spans
    }

    /// Parent ↔ child edges in both directions plus self-loops.
    pub fn adjacency(&self) -> DiGraph {
        let mut g = DiGraph::new(self.nodes.len());
        for (p, n) in self.nodes.iter().enumerate() {
            for &c in &n.children {
                g.add_edge(p, c);
                g.add_edge(c, p);
            }
        }
        g.add_self_loops();
        g
    }

    /// A chain of `depth` unary nodes above a single leaf.
    pub fn unary_chain(depth: usize) -> Self {
        let mut nodes: Vec<TreeNode> = (0..depth)
            .map(|i| TreeNode {
                label: format!("U{i}"),
                children: vec![i + 1],
            })
            .collect();
        nodes.push(TreeNode {
            label: "w".into(),
            children: vec![],
        });
        let mut t = Self {
            nodes,
            root: 0,
            leaves: vec![depth],
            kept_nodes: vec![],
        };
        t.kept_nodes = select_subsentence_nodes(&t);
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_leaf_tree() {
        let t = parse_bracketed("(S (NP (A x) (B y)) (VP (C z)))").unwrap();
        assert_eq!(t.leaf_count(), 3);
        assert_eq!(t.nodes[t.root].label, "S");
        let np = t.nodes.iter().position(|n| n.label == "NP").unwrap();
        assert_eq!(t.leaf_counts()[np], 2);
        assert_eq!(t.word_spans()[np], (0, 2));
    }

    #[test]
    fn single_leaf_keeps_nothing() {
        let t = parse_bracketed("(ROOT (X w))").unwrap();
        assert_eq!(t.leaf_count(), 1);
        assert!(t.kept_nodes.is_empty());
    }

    #[test]
    fn malformed_brackets_are_rejected() {
        assert!(parse_bracketed("((S x)").is_err());
        assert!(parse_bracketed("(S x))").is_err());
        assert!(parse_bracketed("(S (X))").is_err());
        assert!(parse_bracketed("x").is_err());
        assert!(parse_bracketed("").is_err());
    }

    #[test]
    fn subsentence_roots_need_two_leaves() {
        let t = parse_bracketed("(S (NP (A Michelle) (B Ferre)) (VP (C is)))").unwrap();
        let labels: Vec<&str> = t
            .kept_nodes
            .iter()
            .map(|&i| t.nodes[i].label.as_str())
            .collect();
        assert_eq!(labels, vec!["S", "NP"]);
    }

    #[test]
    fn balanced_binary_tree_keeps_all_internal_nodes() {
        let t = parse_bracketed("(S (L a b) (R c d))").unwrap();
        let labels: Vec<&str> = t
            .kept_nodes
            .iter()
            .map(|&i| t.nodes[i].label.as_str())
            .collect();
        assert_eq!(labels, vec!["S", "L", "R"]);
    }

    #[test]
    fn empty_root_label_is_allowed() {
        let t = parse_bracketed("( (S (NP a) (VP b)))").unwrap();
        assert_eq!(t.nodes[0].label, "");
        assert_eq!(t.leaf_count(), 2);
    }

    #[test]
    fn kept_nodes_are_closed_under_ancestors() {
        let t = parse_bracketed(
            "(S (NP (DT the) (NN cat)) (VP (VBD sat) (PP (IN on) (NP (DT the) (NN mat)))))",
        )
        .unwrap();
        let mut parent = vec![None; t.len()];
        for (p, n) in t.nodes.iter().enumerate() {
            for &c in &n.children {
                parent[c] = Some(p);
            }
        }
        for &k in &t.kept_nodes {
            let mut cur = parent[k];
            while let Some(p) = cur {
                assert!(t.kept_nodes.contains(&p));
                cur = parent[p];
            }
        }
        let internal = (0..t.len()).filter(|&i| !t.is_leaf(i)).count();
        assert!(t.kept_nodes.len() <= internal);
    }

    #[test]
    fn leaves_must_match_aligned_words() {
        assert!(build_constituency_tree("(S (A x) (B y))", &[vec![0], vec![1]]).is_ok());
        assert!(build_constituency_tree("(S (A x) (B y) (C z))", &[vec![0], vec![1]]).is_err());
    }
}
