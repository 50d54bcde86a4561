//! Dedicated attention over subsentence states, the relation head and the
//! evidence head.

use rand::{Rng, RngCore};

use crate::autograd::{Tape, Var};
use crate::params::{ParamGroup, ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct FusionParams {
    /// `d2 × 1`
    pub w: ParamId,
    /// `d2 × d_v`
    pub w_b1: ParamId,
    /// `d2 × d_n`
    pub w_b2: ParamId,
    /// `d_v × d_n`
    pub w_m: ParamId,
}

impl FusionParams {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        d_v: usize,
        d_n: usize,
        d2: usize,
        rng: &mut R,
    ) -> Self {
        let g = ParamGroup::Rest;
        Self {
            w: store.add_glorot(format!("{prefix}.w"), g, d2, 1, rng),
            w_b1: store.add_glorot(format!("{prefix}.w_b1"), g, d2, d_v, rng),
            w_b2: store.add_glorot(format!("{prefix}.w_b2"), g, d2, d_n, rng),
            w_m: store.add_glorot(format!("{prefix}.w_m"), g, d_v, d_n, rng),
        }
    }
}

#[derive(Clone, Debug)]
pub struct HeadParams {
    pub w_t1: ParamId,
    pub w_t2: ParamId,
    pub w_q1: ParamId,
    pub w_q2: ParamId,
    /// One row-major `d × d` form per class; row 0 is the threshold class.
    pub w_r: ParamId,
    pub b_r: ParamId,
    pub w_g: ParamId,
    pub b_g: ParamId,
}

impl HeadParams {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        d: usize,
        classes: usize,
        rng: &mut R,
    ) -> Self {
        let g = ParamGroup::Rest;
        Self {
            w_t1: store.add_glorot("head.w_t1", g, d, d, rng),
            w_t2: store.add_glorot("head.w_t2", g, d, d, rng),
            w_q1: store.add_glorot("head.w_q1", g, d, d, rng),
            w_q2: store.add_glorot("head.w_q2", g, d, d, rng),
            // output forms start at zero: tied logits and p = 0.5
            w_r: store.add_zeros("head.w_r", g, classes, d * d),
            b_r: store.add_zeros("head.b_r", g, 1, classes),
            w_g: store.add_zeros("head.w_g", g, d, d),
            b_g: store.add_zeros("head.b_g", g, 1, 1),
        }
    }
}

/// Inverted dropout on attention weights, applied after the softmax and
/// without renormalising.
pub struct AttentionDropout<'r> {
    pub rate: f64,
    pub rng: &'r mut dyn RngCore,
}

impl AttentionDropout<'_> {
    fn mask(&mut self, rows: usize, cols: usize) -> Tensor {
        let keep = 1.0 - self.rate;
        let mut m = Tensor::zeros(rows, cols);
        for x in m.data_mut() {
            *x = if self.rng.gen_bool(keep) {
                1.0 / keep
            } else {
                0.0
            };
        }
        m
    }
}

/// Attention of every row of `v` over the rows of `n`: `rows × B`.
pub fn dedicated_attention(
    tape: &mut Tape<'_>,
    v: Var,
    n: Var,
    params: &FusionParams,
    dropout: Option<&mut AttentionDropout<'_>>,
) -> Var {
    let (w, w_b1, w_b2) = (
        tape.param(params.w),
        tape.param(params.w_b1),
        tape.param(params.w_b2),
    );
    let a = tape.matmul_t(v, w_b1);
    let b = tape.matmul_t(n, w_b2);
    let q = tape.additive_scores(a, b, w);
    let beta = tape.softmax_rows(q);
    match dropout {
        Some(d) if d.rate > 0.0 => {
            let (r, c) = tape.value(beta).shape();
            let mask = d.mask(r, c);
            tape.mul_const(beta, mask)
        }
        _ => beta,
    }
}

/// Uniform weights `1/B`, used when dynamic fusion is ablated.
pub fn uniform_attention(tape: &mut Tape<'_>, rows: usize, b: usize) -> Var {
    tape.leaf(Tensor::filled(rows, b, 1.0 / b as f64))
}

/// `v + (β·N)·W_mᵀ`.
pub fn fuse(tape: &mut Tape<'_>, v: Var, n: Var, beta: Var, w_m: ParamId) -> Var {
    let mixed = tape.matmul(beta, n);
    let w = tape.param(w_m);
    let delta = tape.matmul_t(mixed, w);
    tape.add(v, delta)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FusionMode {
    Attention,
    /// Mean over subsentences.
    Uniform,
}

#[derive(Clone, Copy, Debug)]
pub struct EnhancedPair {
    pub e_s: Var,
    pub e_o: Var,
    pub c: Var,
    /// Attention weights used for `(e_s, e_o, c)`, each `P × B`.
    pub betas: Option<[Var; 3]>,
}

/// Fuses subject, object and context rows with the subsentence matrix `n`.
/// Without subsentences the inputs pass through unchanged.
pub fn enhance_pair(
    tape: &mut Tape<'_>,
    e_s: Var,
    e_o: Var,
    c: Var,
    n: Option<Var>,
    params: &FusionParams,
    mode: FusionMode,
    mut dropout: Option<&mut AttentionDropout<'_>>,
) -> EnhancedPair {
    let Some(n) = n else {
        return EnhancedPair {
            e_s,
            e_o,
            c,
            betas: None,
        };
    };
    let b = tape.value(n).rows();
    let mut out = [e_s, e_o, c];
    let mut betas = [e_s; 3];
    for (k, v) in [e_s, e_o, c].into_iter().enumerate() {
        let beta = match mode {
            FusionMode::Attention => {
                dedicated_attention(tape, v, n, params, dropout.as_deref_mut())
            }
            FusionMode::Uniform => {
                let rows = tape.value(v).rows();
                uniform_attention(tape, rows, b)
            }
        };
        out[k] = fuse(tape, v, n, beta, params.w_m);
        betas[k] = beta;
    }
    EnhancedPair {
        e_s: out[0],
        e_o: out[1],
        c: out[2],
        betas: Some(betas),
    }
}

/// Logits over `{TH} ∪ R`, one row per pair.
pub fn relation_logits(
    tape: &mut Tape<'_>,
    e_s: Var,
    e_o: Var,
    c: Var,
    head: &HeadParams,
    block: Option<usize>,
) -> Var {
    let lin = |tape: &mut Tape<'_>, x: Var, w: ParamId| {
        let wv = tape.param(w);
        tape.matmul_t(x, wv)
    };
    let a = lin(tape, e_s, head.w_t1);
    let b = lin(tape, c, head.w_t2);
    let zs = tape.add(a, b);
    let zs = tape.tanh(zs);
    let a = lin(tape, e_o, head.w_q1);
    let b = lin(tape, c, head.w_q2);
    let zo = tape.add(a, b);
    let zo = tape.tanh(zo);
    let w_r = tape.param(head.w_r);
    let l = tape.bilinear(zs, zo, w_r, block);
    let b_r = tape.param(head.b_r);
    tape.add_row(l, b_r)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SentenceCombine {
    /// Each sentence attends over every constituency sentence embedding.
    Attention,
    /// `s_i = s_dep_i + W_m·s_con_i`.
    Paired,
}

pub fn combine_sentence_embeddings(
    tape: &mut Tape<'_>,
    s_dep: Var,
    s_con: Var,
    params: &FusionParams,
    mode: SentenceCombine,
    dropout: Option<&mut AttentionDropout<'_>>,
) -> Var {
    match mode {
        SentenceCombine::Attention => {
            let beta = dedicated_attention(tape, s_dep, s_con, params, dropout);
            fuse(tape, s_dep, s_con, beta, params.w_m)
        }
        SentenceCombine::Paired => {
            let w = tape.param(params.w_m);
            let delta = tape.matmul_t(s_con, w);
            tape.add(s_dep, delta)
        }
    }
}

/// Evidence probabilities `σ(s_iᵀ·W_g·ĉ + b_g)`: one row per pair, one
/// column per sentence.
pub fn evidence_probability(tape: &mut Tape<'_>, s: Var, c: Var, head: &HeadParams) -> Var {
    let w_g = tape.param(head.w_g);
    let gc = tape.matmul_t(c, w_g);
    let logits = tape.matmul_t(gc, s);
    let b_g = tape.param(head.b_g);
    let logits = tape.add_scalar_var(logits, b_g);
    tape.sigmoid(logits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::sigmoid;
    use crate::gradcheck::{check_param_gradients, sample_entries};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fusion(d_v: usize, d_n: usize, d2: usize, seed: u64) -> (ParamStore, FusionParams) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = FusionParams::new(&mut store, "f", d_v, d_n, d2, &mut rng);
        (store, p)
    }

    fn mv(w: &Tensor, v: &[f64]) -> Vec<f64> {
        (0..w.rows())
            .map(|r| w.row(r).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    fn naive_beta(store: &ParamStore, p: &FusionParams, v: &[f64], n: &Tensor) -> Vec<f64> {
        let a = mv(store.get(p.w_b1), v);
        let q: Vec<f64> = (0..n.rows())
            .map(|i| {
                let b = mv(store.get(p.w_b2), n.row(i));
                a.iter()
                    .zip(&b)
                    .zip(store.get(p.w).data())
                    .map(|((x, y), w)| w * (x + y).tanh())
                    .sum()
            })
            .collect();
        let e: Vec<f64> = q.iter().map(|x| x.exp()).collect();
        let t: f64 = e.iter().sum();
        e.iter().map(|x| x / t).collect()
    }

    #[test]
    fn single_subsentence_gets_all_weight() {
        let (store, p) = fusion(3, 2, 4, 1);
        let mut tape = Tape::new(&store);
        let v = tape.leaf(Tensor::row_vector(&[1.0, -2.0, 0.5]));
        let n = tape.leaf(Tensor::row_vector(&[0.3, 0.7]));
        let beta = dedicated_attention(&mut tape, v, n, &p, None);
        assert_eq!(tape.value(beta).data(), &[1.0]);
        let fused = fuse(&mut tape, v, n, beta, p.w_m);
        let want = Tensor::row_vector(&[1.0, -2.0, 0.5]).zip_map(
            &Tensor::row_vector(&[0.3, 0.7]).matmul_t(store.get(p.w_m)),
            |a, b| a + b,
        );
        assert_eq!(tape.value(fused), &want);
    }

    #[test]
    fn identical_subsentences_get_uniform_weight() {
        let (store, p) = fusion(3, 2, 4, 2);
        let mut tape = Tape::new(&store);
        let v = tape.leaf(Tensor::row_vector(&[1.0, -2.0, 0.5]));
        let n = tape.leaf(Tensor::filled(4, 2, 0.6));
        let beta = dedicated_attention(&mut tape, v, n, &p, None);
        assert!(tape
            .value(beta)
            .data()
            .iter()
            .all(|&b| (b - 0.25).abs() < 1e-15));
    }

    #[test]
    fn attention_matches_per_row_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for seed in 0..20 {
            let (store, p) = fusion(3, 2, 5, seed);
            let v = Tensor::uniform(2, 3, 1.5, &mut rng);
            let n = Tensor::uniform(4, 2, 1.5, &mut rng);
            let mut tape = Tape::new(&store);
            let (vv, nv) = (tape.leaf(v.clone()), tape.leaf(n.clone()));
            let beta = dedicated_attention(&mut tape, vv, nv, &p, None);
            for r in 0..2 {
                let want = naive_beta(&store, &p, v.row(r), &n);
                for (a, b) in tape.value(beta).row(r).iter().zip(&want) {
                    assert!((a - b).abs() < 1e-12);
                }
                assert!((tape.value(beta).row(r).iter().sum::<f64>() - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn dropout_zeroes_or_rescales_without_renormalising() {
        let (store, p) = fusion(3, 2, 4, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut tape = Tape::new(&store);
        let v = tape.leaf(Tensor::uniform(3, 3, 1.0, &mut rng));
        let n = tape.leaf(Tensor::uniform(6, 2, 1.0, &mut rng));
        let clean = dedicated_attention(&mut tape, v, n, &p, None);
        let mut drop_rng = ChaCha8Rng::seed_from_u64(6);
        let mut d = AttentionDropout {
            rate: 0.5,
            rng: &mut drop_rng,
        };
        let dropped = dedicated_attention(&mut tape, v, n, &p, Some(&mut d));
        let (c, dr) = (tape.value(clean), tape.value(dropped));
        let mut zeros = 0;
        for (a, b) in c.data().iter().zip(dr.data()) {
            if *b == 0.0 {
                zeros += 1;
            } else {
                assert!((b - 2.0 * a).abs() < 1e-15);
            }
        }
        assert!(zeros > 0 && zeros < c.len());
    }

    #[test]
    fn fusion_identities() {
        let (mut store, p) = fusion(3, 2, 4, 7);
        *store.get_mut(p.w_m) = Tensor::zeros(3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut tape = Tape::new(&store);
        let es = tape.leaf(Tensor::uniform(2, 3, 1.0, &mut rng));
        let eo = tape.leaf(Tensor::uniform(2, 3, 1.0, &mut rng));
        let c = tape.leaf(Tensor::uniform(2, 3, 1.0, &mut rng));
        let n = tape.leaf(Tensor::uniform(3, 2, 1.0, &mut rng));
        let out = enhance_pair(
            &mut tape,
            es,
            eo,
            c,
            Some(n),
            &p,
            FusionMode::Attention,
            None,
        );
        assert_eq!(tape.value(out.e_s), tape.value(es));
        assert_eq!(tape.value(out.c), tape.value(c));
        let none = enhance_pair(&mut tape, es, eo, c, None, &p, FusionMode::Attention, None);
        assert_eq!((none.e_s, none.e_o, none.c), (es, eo, c));
    }

    #[test]
    fn subject_and_object_attend_differently() {
        let (store, p) = fusion(3, 2, 4, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut tape = Tape::new(&store);
        let es = tape.leaf(Tensor::uniform(1, 3, 1.0, &mut rng));
        let eo = tape.leaf(Tensor::uniform(1, 3, 1.0, &mut rng));
        let c = tape.leaf(Tensor::uniform(1, 3, 1.0, &mut rng));
        let n = tape.leaf(Tensor::uniform(4, 2, 1.0, &mut rng));
        let out = enhance_pair(
            &mut tape,
            es,
            eo,
            c,
            Some(n),
            &p,
            FusionMode::Attention,
            None,
        );
        let [bs, bo, _] = out.betas.unwrap();
        assert!(tape.value(bs).max_abs_diff(tape.value(bo)) > 1e-6);
    }

    #[test]
    fn uniform_mode_adds_the_mean_subsentence() {
        let (store, p) = fusion(3, 2, 4, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = Tensor::uniform(4, 2, 1.0, &mut rng);
        let c = Tensor::uniform(1, 3, 1.0, &mut rng);
        let mut tape = Tape::new(&store);
        let (cv, nv) = (tape.leaf(c.clone()), tape.leaf(n.clone()));
        let out = enhance_pair(
            &mut tape,
            cv,
            cv,
            cv,
            Some(nv),
            &p,
            FusionMode::Uniform,
            None,
        );
        let mean: Vec<f64> = (0..2)
            .map(|k| (0..4).map(|r| n.get(r, k)).sum::<f64>() / 4.0)
            .collect();
        let delta = mv(store.get(p.w_m), &mean);
        for k in 0..3 {
            assert!((tape.value(out.c).get(0, k) - (c.get(0, k) + delta[k])).abs() < 1e-14);
        }
    }

    fn head(d: usize, classes: usize, seed: u64) -> (ParamStore, HeadParams) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = HeadParams::new(&mut store, d, classes, &mut rng);
        *store.get_mut(h.w_r) = Tensor::uniform(classes, d * d, 0.5, &mut rng);
        *store.get_mut(h.b_r) = Tensor::uniform(1, classes, 1.0, &mut rng);
        *store.get_mut(h.w_g) = Tensor::uniform(d, d, 0.5, &mut rng);
        (store, h)
    }

    #[test]
    fn zero_projections_leave_only_the_bias() {
        let (mut store, h) = head(3, 4, 1);
        for id in [h.w_t1, h.w_t2, h.w_q1, h.w_q2] {
            store.get_mut(id).scale_assign(0.0);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut tape = Tape::new(&store);
        let x = tape.leaf(Tensor::uniform(2, 3, 1.0, &mut rng));
        let l = relation_logits(&mut tape, x, x, x, &h, None);
        for r in 0..2 {
            assert_eq!(tape.value(l).row(r), store.get(h.b_r).row(0));
        }
        store.get_mut(h.b_r).scale_assign(0.0);
        store.get_mut(h.w_r).scale_assign(0.0);
        let mut tape = Tape::new(&store);
        let x = tape.leaf(Tensor::uniform(2, 3, 1.0, &mut rng));
        let l = relation_logits(&mut tape, x, x, x, &h, None);
        assert!(tape.value(l).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn logits_match_triple_loop_oracle() {
        let (store, h) = head(4, 4, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (es, eo, c) = (
            Tensor::uniform(3, 4, 1.0, &mut rng),
            Tensor::uniform(3, 4, 1.0, &mut rng),
            Tensor::uniform(3, 4, 1.0, &mut rng),
        );
        for block in [None, Some(2)] {
            let mut tape = Tape::new(&store);
            let (a, b, cc) = (
                tape.leaf(es.clone()),
                tape.leaf(eo.clone()),
                tape.leaf(c.clone()),
            );
            let l = relation_logits(&mut tape, a, b, cc, &h, block);
            for p in 0..3 {
                let t1 = mv(store.get(h.w_t1), es.row(p));
                let t2 = mv(store.get(h.w_t2), c.row(p));
                let q1 = mv(store.get(h.w_q1), eo.row(p));
                let q2 = mv(store.get(h.w_q2), c.row(p));
                let zs: Vec<f64> = (0..4).map(|k| (t1[k] + t2[k]).tanh()).collect();
                let zo: Vec<f64> = (0..4).map(|k| (q1[k] + q2[k]).tanh()).collect();
                for r in 0..4 {
                    let w = store.get(h.w_r).row(r);
                    let mut acc = store.get(h.b_r).data()[r];
                    for i in 0..4 {
                        for j in 0..4 {
                            if block.is_none_or(|k| i / k == j / k) {
                                acc += zs[i] * w[i * 4 + j] * zo[j];
                            }
                        }
                    }
                    assert!((tape.value(l).get(p, r) - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn sentence_combination() {
        let (store, p) = fusion(3, 2, 4, 13);
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let s_dep = Tensor::uniform(3, 3, 1.0, &mut rng);
        let s_con = Tensor::uniform(3, 2, 1.0, &mut rng);
        let mut tape = Tape::new(&store);
        let (a, b) = (tape.leaf(s_dep.clone()), tape.leaf(s_con.clone()));
        let s = combine_sentence_embeddings(&mut tape, a, b, &p, SentenceCombine::Attention, None);
        for i in 0..3 {
            let beta = naive_beta(&store, &p, s_dep.row(i), &s_con);
            let mix: Vec<f64> = (0..2)
                .map(|k| (0..3).map(|j| beta[j] * s_con.get(j, k)).sum())
                .collect();
            let delta = mv(store.get(p.w_m), &mix);
            for k in 0..3 {
                assert!((tape.value(s).get(i, k) - (s_dep.get(i, k) + delta[k])).abs() < 1e-12);
            }
        }
        let one = combine_sentence_embeddings(&mut tape, a, b, &p, SentenceCombine::Paired, None);
        let want = s_dep.zip_map(&s_con.matmul_t(store.get(p.w_m)), |x, y| x + y);
        assert_eq!(tape.value(one), &want);

        let a1 = tape.leaf(s_dep.select_rows(&[0]));
        let b1 = tape.leaf(s_con.select_rows(&[0]));
        let s1 =
            combine_sentence_embeddings(&mut tape, a1, b1, &p, SentenceCombine::Attention, None);
        let paired =
            combine_sentence_embeddings(&mut tape, a1, b1, &p, SentenceCombine::Paired, None);
        assert_eq!(tape.value(s1), tape.value(paired));
    }

    #[test]
    fn evidence_probability_examples() {
        let (mut store, h) = head(2, 2, 5);
        store.get_mut(h.w_g).scale_assign(0.0);
        let mut tape = Tape::new(&store);
        let s = tape.leaf(Tensor::from_rows(&[vec![1.0, 2.0], vec![-3.0, 0.5]]));
        let c = tape.leaf(Tensor::row_vector(&[0.5, 0.25]));
        let p = evidence_probability(&mut tape, s, c, &h);
        assert_eq!(tape.value(p).data(), &[0.5, 0.5]);

        // sᵀ·W_g·c = 1·1·0.5 = 0.5 and b_g = ln 3 − 0.5
        *store.get_mut(h.w_g) = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]);
        *store.get_mut(h.b_g) = Tensor::scalar(3f64.ln() - 0.5);
        let mut tape = Tape::new(&store);
        let s = tape.leaf(Tensor::row_vector(&[1.0, 7.0]));
        let c = tape.leaf(Tensor::row_vector(&[0.5, -4.0]));
        let p = evidence_probability(&mut tape, s, c, &h);
        assert!((tape.value(p).item() - 0.75).abs() < 1e-12);
        assert!((sigmoid(3f64.ln()) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn softmax_shift_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let q = Tensor::uniform(1, 5, 3.0, &mut rng);
        let mut tape = Tape::detached();
        let a = tape.leaf(q.clone());
        let b = tape.leaf(q.map(|x| x + 17.5));
        let sa = tape.softmax_rows(a);
        let sb = tape.softmax_rows(b);
        assert!(tape.value(sa).max_abs_diff(tape.value(sb)) < 1e-12);
    }

    #[test]
    fn fusion_and_head_gradients() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let f = FusionParams::new(&mut store, "pair", 3, 2, 4, &mut rng);
        let fs = FusionParams::new(&mut store, "sent", 3, 2, 4, &mut rng);
        let h = HeadParams::new(&mut store, 3, 3, &mut rng);
        for id in [h.w_r, h.b_r, h.w_g] {
            let (r, c) = store.get(id).shape();
            *store.get_mut(id) = Tensor::uniform(r, c, 0.5, &mut rng);
        }
        let es = Tensor::uniform(2, 3, 1.0, &mut rng);
        let eo = Tensor::uniform(2, 3, 1.0, &mut rng);
        let c = Tensor::uniform(2, 3, 1.0, &mut rng);
        let n = Tensor::uniform(3, 2, 1.0, &mut rng);
        let sd = Tensor::uniform(2, 3, 1.0, &mut rng);
        let sc = Tensor::uniform(2, 2, 1.0, &mut rng);
        let entries = sample_entries(&store, 1.0, 1, &mut rng);
        let report = check_param_gradients(&store, &entries, |tape| {
            let [a, b, cc, nv, sdv, scv] =
                [&es, &eo, &c, &n, &sd, &sc].map(|t| tape.leaf(t.clone()));
            let out = enhance_pair(tape, a, b, cc, Some(nv), &f, FusionMode::Attention, None);
            let logits = relation_logits(tape, out.e_s, out.e_o, out.c, &h, None);
            let s =
                combine_sentence_embeddings(tape, sdv, scv, &fs, SentenceCombine::Attention, None);
            let p = evidence_probability(tape, s, out.c, &h);
            let re = tape.atl_loss(logits, vec![vec![1], vec![]], 0.5);
            let ev = tape.bce_sum(p, vec![Some(vec![1.0, 0.0]), None], 1.0);
            let ev = tape.scale(ev, 0.1);
            tape.add(re, ev)
        });
        assert!(report.max_rel_err < 1e-4, "{report:?}");
    }
}
