use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::graph::DiGraph;
use crate::error::{Error, Result};

/// One row of a word-level dependency parse (1-based, head 0 = root).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DepRow {
    pub index: usize,
    pub word: String,
    pub head: usize,
    pub deprel: String,
}

/// Parses `index<TAB>word<TAB>head<TAB>deprel` rows, one blank-line-separated
/// block per sentence.
pub fn parse_dep_tsv(text: &str) -> Result<Vec<Vec<DepRow>>> {
    let mut sentences = Vec::new();
    let mut current = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            if !current.is_empty() {
                sentences.push(std::mem::take(&mut current));
            }
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(Error::DependencyParse(format!(
                "line {}: expected 4 tab-separated columns",
                lineno + 1
            )));
        }
        let num = |s: &str| {
            s.trim().parse::<usize>().map_err(|_| {
                Error::DependencyParse(format!("line {}: bad integer {s:?}", lineno + 1))
            })
        };
        current.push(DepRow {
            index: num(cols[0])?,
            word: cols[1].to_string(),
            head: num(cols[2])?,
            deprel: cols[3].to_string(),
        });
    }
    if !current.is_empty() {
        sentences.push(current);
    }
    Ok(sentences)
}

/// Checks that `rows` form a single-rooted acyclic tree over `words`.
pub fn validate_dep_rows(rows: &[DepRow], words: &[String]) -> Result<()> {
    let n = words.len();
    if rows.len() != n {
        return Err(Error::DependencyParse(format!(
            "{} rows for {n} words",
            rows.len()
        )));
    }
    for (i, r) in rows.iter().enumerate() {
        if r.index != i + 1 {
            return Err(Error::DependencyParse(format!(
                "row {} has index {}",
                i + 1,
                r.index
            )));
        }
        if r.word != words[i] {
            return Err(Error::DependencyParse(format!(
                "row {} word {:?} differs from {:?}",
                i + 1,
                r.word,
                words[i]
            )));
        }
        if r.head > n || r.head == r.index {
            return Err(Error::DependencyParse(format!(
                "row {} has invalid head {}",
                i + 1,
                r.head
            )));
        }
    }
    let roots = rows.iter().filter(|r| r.head == 0).count();
    if roots != 1 {
        return Err(Error::DependencyParse(format!(
            "expected exactly one root, found {roots}"
        )));
    }
    for start in 0..n {
        let mut cur = start;
        for _ in 0..=n {
            match rows[cur].head {
                0 => break,
                h => cur = h - 1,
            }
        }
        if rows[cur].head != 0 {
            return Err(Error::DependencyParse(format!(
                "cycle through word {}",
                start + 1
            )));
        }
    }
    Ok(())
}

/// Expands a word-level dependency tree to the tokens of one sentence.
///
/// `word_tokens[w]` lists the document-level token indices of word `w` and
/// `span` is the sentence's token range; node ids are relative to
/// `span.start`. Word edges connect first subwords, later subwords hang off
/// the first one, and every token (markers included) gets a self-loop.
pub fn build_dependency_graph(
    rows: &[DepRow],
    word_tokens: &[Vec<usize>],
    span: Range<usize>,
    bidirectional: bool,
) -> Result<DiGraph> {
    let words: Vec<String> = rows.iter().map(|r| r.word.clone()).collect();
    validate_dep_rows(rows, &words)?;
    if word_tokens.len() != rows.len() {
        return Err(Error::DependencyParse(format!(
            "{} aligned words for {} rows",
            word_tokens.len(),
            rows.len()
        )));
    }
    let local = |t: usize| t - span.start;
    let mut g = DiGraph::new(span.len());
    let link = |g: &mut DiGraph, a: usize, b: usize| {
        g.add_edge(a, b);
        if bidirectional {
            g.add_edge(b, a);
        }
    };
    for r in rows {
        if r.head > 0 {
            let head = local(word_tokens[r.head - 1][0]);
            let dep = local(word_tokens[r.index - 1][0]);
            link(&mut g, head, dep);
        }
    }
    for toks in word_tokens {
        for &t in &toks[1..] {
            link(&mut g, local(toks[0]), local(t));
        }
    }
    g.add_self_loops();
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn rows(heads: &[usize]) -> Vec<DepRow> {
        heads
            .iter()
            .enumerate()
            .map(|(i, &h)| DepRow {
                index: i + 1,
                word: format!("w{i}"),
                head: h,
                deprel: "dep".into(),
            })
            .collect()
    }

    #[test]
    fn two_words_with_split_dependent() {
        // A -> B, A = [a0], B = [b0, b1]
        let g =
            build_dependency_graph(&rows(&[0, 1]), &[vec![0], vec![1, 2]], 0..3, false).unwrap();
        let edges: BTreeSet<_> = g.edges.iter().copied().collect();
        assert_eq!(
            edges,
            BTreeSet::from([(0, 1), (1, 2), (0, 0), (1, 1), (2, 2)])
        );
    }

    #[test]
    fn single_word_has_only_a_self_loop() {
        let g = build_dependency_graph(&rows(&[0]), &[vec![5]], 5..6, false).unwrap();
        assert_eq!(g.edges, vec![(0, 0)]);
    }

    #[test]
    fn markers_only_get_self_loops() {
        // tokens: * a * b, words a=1, b=3
        let g = build_dependency_graph(&rows(&[0, 1]), &[vec![1], vec![3]], 0..4, false).unwrap();
        assert!(g.edges.contains(&(0, 0)) && g.edges.contains(&(2, 2)));
        assert!(!g
            .edges
            .iter()
            .any(|&(s, d)| s != d && (s == 0 || d == 0 || s == 2 || d == 2)));
        g.check().unwrap();
    }

    #[test]
    fn bidirectional_adds_reverse_edges() {
        let g = build_dependency_graph(&rows(&[0, 1]), &[vec![0], vec![1]], 0..2, true).unwrap();
        assert!(g.edges.contains(&(0, 1)) && g.edges.contains(&(1, 0)));
    }

    #[test]
    fn multiple_roots_and_cycles_are_rejected() {
        assert!(build_dependency_graph(&rows(&[0, 0]), &[vec![0], vec![1]], 0..2, false).is_err());
        assert!(build_dependency_graph(
            &rows(&[2, 3, 0, 5, 4]),
            &[vec![0], vec![1], vec![2], vec![3], vec![4]],
            0..5,
            false
        )
        .is_err());
    }

    #[test]
    fn tsv_blocks_parse() {
        let text = "1\tA\t0\troot\n2\tB\t1\tobj\n\n1\tC\t0\troot\n";
        let s = parse_dep_tsv(text).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(
            s[0][1],
            DepRow {
                index: 2,
                word: "B".into(),
                head: 1,
                deprel: "obj".into()
            }
        );
        assert!(parse_dep_tsv("1\tA\t0\n").is_err());
    }

    /// Random tree over `n` words with the root chosen at random.
    fn tree_and_splits() -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
        (1usize..=6).prop_flat_map(|n| {
            (
                Just(n),
                prop::collection::vec(any::<prop::sample::Index>(), n),
                prop::sample::subsequence((0..n).collect::<Vec<_>>(), n).prop_shuffle(),
                prop::collection::vec(1usize..=3, n),
            )
                .prop_map(|(n, picks, order, splits)| {
                    // order[0] is the root; every later word picks a head among earlier ones
                    let mut heads = vec![0; n];
                    for k in 1..n {
                        heads[order[k]] = order[picks[k].index(k)] + 1;
                    }
                    (heads, splits)
                })
        })
    }

    proptest! {
        #[test]
        fn edge_count_matches_enumeration((heads, splits) in tree_and_splits()) {
            let r = rows(&heads);
            let mut word_tokens = Vec::new();
            let mut t = 0;
            for &k in &splits {
                word_tokens.push((t..t + k).collect::<Vec<_>>());
                t += k;
            }
            let g = build_dependency_graph(&r, &word_tokens, 0..t, false).unwrap();

            // independent enumeration over the same rows
            let mut expected = BTreeSet::new();
            for (i, &h) in heads.iter().enumerate() {
                if h > 0 {
                    expected.insert((word_tokens[h - 1][0], word_tokens[i][0]));
                }
                for &sub in &word_tokens[i][1..] {
                    expected.insert((word_tokens[i][0], sub));
                }
            }
            for tok in 0..t {
                expected.insert((tok, tok));
            }
            let n = heads.len();
            prop_assert_eq!(g.edges.len(), (n - 1) + (t - n) + t);
            prop_assert_eq!(g.edges.iter().copied().collect::<BTreeSet<_>>(), expected);
            prop_assert!(g.check().is_ok());
        }
    }
}
