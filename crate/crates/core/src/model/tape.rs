//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! Every value is a 2-D array; scalars are `1 x 1`. Operations append a
//! node to the tape, and [`Tape::backward`] walks the tape in reverse.
//! Batches of variable-length sequences are stored as stacked rows, with
//! row ranges describing which rows belong to which sample.

use std::ops::Range;

use ndarray::{s, Array1, Array2, Axis, Zip};
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Query rows attending to key rows; both ranges index stacked rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttnSegment {
    pub queries: Range<usize>,
    pub keys: Range<usize>,
}

const LN_EPS: f64 = 1e-5;

enum Op {
    Leaf,
    Linear { x: Var, w: Var, b: Option<Var> },
    Add(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Array2<f64>, inv_std: Array1<f64> },
    Gather { table: Var, rows: Vec<usize> },
    Rows { parts: Vec<(Var, Range<usize>)> },
    Attention { q: Var, k: Var, v: Var, segments: Vec<AttnSegment>, heads: usize, probs: Vec<Array2<f64>> },
    SegmentMean { x: Var, segments: Vec<Range<usize>> },
    Dropout { x: Var, mask: Array2<f64> },
    /// Scalar whose gradients with respect to `inputs` were computed eagerly.
    Loss { inputs: Vec<Var>, grads: Vec<Array2<f64>> },
    WeightedSum(Vec<(Var, f64)>),
}

#[derive(Default)]
pub struct Tape {
    values: Vec<Array2<f64>>,
    ops: Vec<Op>,
}

pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

fn accumulate(grads: &mut [Option<Array2<f64>>], v: Var, delta: Array2<f64>) {
    match &mut grads[v.0] {
        Some(g) => *g += &delta,
        slot @ None => *slot = Some(delta),
    }
}

fn accumulate_rows(grads: &mut [Option<Array2<f64>>], v: Var, shape: (usize, usize), rows: Range<usize>, delta: ndarray::ArrayView2<f64>) {
    let g = grads[v.0].get_or_insert_with(|| Array2::zeros(shape));
    let mut dst = g.slice_mut(s![rows, ..]);
    dst += &delta;
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.values.push(value);
        self.ops.push(op);
        Var(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.values[v.0]
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.values[v.0][[0, 0]]
    }

    /// `x · w (+ b)`, with `w` of shape `in x out` and `b` of shape `1 x out`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let mut y = self.values[x.0].dot(&self.values[w.0]);
        if let Some(b) = b {
            y += &self.values[b.0].row(0);
        }
        self.push(y, Op::Linear { x, w, b })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let y = &self.values[a.0] + &self.values[b.0];
        self.push(y, Op::Add(a, b))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let y = &self.values[a.0] * k;
        self.push(y, Op::Scale(a, k))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let y = self.values[a.0].mapv(|v| v.max(0.0));
        self.push(y, Op::Relu(a))
    }

    /// Row-wise layer normalisation with affine `1 x d` parameters.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = &self.values[x.0];
        let d = xv.ncols() as f64;
        let mean = xv.sum_axis(Axis(1)) / d;
        let centered = xv - &mean.view().insert_axis(Axis(1));
        let var = centered.mapv(|v| v * v).sum_axis(Axis(1)) / d;
        let inv_std = var.mapv(|v| 1.0 / (v + LN_EPS).sqrt());
        let xhat = centered * &inv_std.view().insert_axis(Axis(1));
        let y = &xhat * &self.values[gamma.0].row(0) + &self.values[beta.0].row(0);
        self.push(y, Op::LayerNorm { x, gamma, beta, xhat, inv_std })
    }

    /// Rows of `table` selected by index.
    pub fn gather(&mut self, table: Var, rows: Vec<usize>) -> Var {
        let t = &self.values[table.0];
        let mut y = Array2::zeros((rows.len(), t.ncols()));
        for (i, &r) in rows.iter().enumerate() {
            y.row_mut(i).assign(&t.row(r));
        }
        self.push(y, Op::Gather { table, rows })
    }

    /// Stacks row ranges taken from several inputs.
    pub fn rows(&mut self, parts: Vec<(Var, Range<usize>)>) -> Var {
        let cols = self.values[parts[0].0 .0].ncols();
        let total: usize = parts.iter().map(|(_, r)| r.len()).sum();
        let mut y = Array2::zeros((total, cols));
        let mut at = 0;
        for (v, r) in &parts {
            let n = r.len();
            y.slice_mut(s![at..at + n, ..])
                .assign(&self.values[v.0].slice(s![r.clone(), ..]));
            at += n;
        }
        self.push(y, Op::Rows { parts })
    }

    /// Multi-head scaled dot-product attention over row segments. With
    /// `causal`, query `i` of a segment sees keys `0..=i` of that segment.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, segments: Vec<AttnSegment>, heads: usize, causal: bool) -> Var {
        let (qv, kv, vv) = (&self.values[q.0], &self.values[k.0], &self.values[v.0]);
        let d = qv.ncols();
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = Array2::zeros((qv.nrows(), d));
        let mut probs = Vec::with_capacity(segments.len() * heads);
        for seg in &segments {
            for h in 0..heads {
                let cols = h * dh..(h + 1) * dh;
                let qh = qv.slice(s![seg.queries.clone(), cols.clone()]);
                let kh = kv.slice(s![seg.keys.clone(), cols.clone()]);
                let vh = vv.slice(s![seg.keys.clone(), cols.clone()]);
                let mut p = qh.dot(&kh.t()) * scale;
                for (i, mut row) in p.axis_iter_mut(Axis(0)).enumerate() {
                    if causal {
                        row.slice_mut(s![i + 1..]).fill(f64::NEG_INFINITY);
                    }
                    let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                    row.mapv_inplace(|x| (x - m).exp());
                    let z = row.sum();
                    row /= z;
                }
                out.slice_mut(s![seg.queries.clone(), cols]).assign(&p.dot(&vh));
                probs.push(p);
            }
        }
        self.push(out, Op::Attention { q, k, v, segments, heads, probs })
    }

    /// Mean of each row range; one output row per range.
    pub fn segment_mean(&mut self, x: Var, segments: Vec<Range<usize>>) -> Var {
        let xv = &self.values[x.0];
        let mut y = Array2::zeros((segments.len(), xv.ncols()));
        for (i, r) in segments.iter().enumerate() {
            let mean = xv.slice(s![r.clone(), ..]).mean_axis(Axis(0)).expect("non-empty segment");
            y.row_mut(i).assign(&mean);
        }
        self.push(y, Op::SegmentMean { x, segments })
    }

    /// Inverted dropout; a no-op when `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, rng: &mut R) -> Var {
        if p <= 0.0 {
            return x;
        }
        let keep = 1.0 / (1.0 - p);
        let shape = self.values[x.0].dim();
        let mask = Array2::from_shape_simple_fn(shape, || if rng.random::<f64>() < p { 0.0 } else { keep });
        let y = &self.values[x.0] * &mask;
        self.push(y, Op::Dropout { x, mask })
    }

    /// Registers a scalar loss whose gradients were computed by the caller.
    pub fn loss(&mut self, value: f64, inputs: Vec<Var>, grads: Vec<Array2<f64>>) -> Var {
        debug_assert_eq!(inputs.len(), grads.len());
        self.push(Array2::from_elem((1, 1), value), Op::Loss { inputs, grads })
    }

    pub fn weighted_sum(&mut self, terms: Vec<(Var, f64)>) -> Var {
        let v: f64 = terms.iter().map(|(t, w)| w * self.scalar(*t)).sum();
        self.push(Array2::from_elem((1, 1), v), Op::WeightedSum(terms))
    }

    pub fn backward(&self, root: Var) -> Gradients {
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Array2::ones(self.values[root.0].dim()));

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &self.ops[i] {
                Op::Leaf => {}
                Op::Linear { x, w, b } => {
                    accumulate(&mut grads, *x, g.dot(&self.values[w.0].t()));
                    accumulate(&mut grads, *w, self.values[x.0].t().dot(&g));
                    if let Some(b) = b {
                        accumulate(&mut grads, *b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.clone());
                }
                Op::Scale(a, k) => accumulate(&mut grads, *a, &g * *k),
                Op::Relu(a) => {
                    let mut d = g.clone();
                    Zip::from(&mut d)
                        .and(&self.values[i])
                        .for_each(|d, &y| if y <= 0.0 { *d = 0.0 });
                    accumulate(&mut grads, *a, d);
                }
                Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                    accumulate(&mut grads, *gamma, (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                    accumulate(&mut grads, *beta, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    let dxhat = &g * &self.values[gamma.0].row(0);
                    let d = xhat.ncols() as f64;
                    let sum_dxhat = dxhat.sum_axis(Axis(1));
                    let sum_dxhat_xhat = (&dxhat * xhat).sum_axis(Axis(1));
                    let mut dx = dxhat * d;
                    dx -= &sum_dxhat.view().insert_axis(Axis(1));
                    dx -= &(xhat * &sum_dxhat_xhat.view().insert_axis(Axis(1)));
                    dx *= &(inv_std / d).view().insert_axis(Axis(1));
                    accumulate(&mut grads, *x, dx);
                }
                Op::Gather { table, rows } => {
                    let shape = self.values[table.0].dim();
                    let dt = grads[table.0].get_or_insert_with(|| Array2::zeros(shape));
                    for (r, &t) in rows.iter().enumerate() {
                        let mut dst = dt.row_mut(t);
                        dst += &g.row(r);
                    }
                }
                Op::Rows { parts } => {
                    let mut at = 0;
                    for (v, r) in parts {
                        let n = r.len();
                        let shape = self.values[v.0].dim();
                        accumulate_rows(&mut grads, *v, shape, r.clone(), g.slice(s![at..at + n, ..]));
                        at += n;
                    }
                }
                Op::Attention { q, k, v, segments, heads, probs } => {
                    let (qv, kv, vv) = (&self.values[q.0], &self.values[k.0], &self.values[v.0]);
                    let dh = qv.ncols() / heads;
                    let scale = 1.0 / (dh as f64).sqrt();
                    let mut dq = Array2::zeros(qv.dim());
                    let mut dk = Array2::zeros(kv.dim());
                    let mut dv = Array2::zeros(vv.dim());
                    let mut p_iter = probs.iter();
                    for seg in segments {
                        for h in 0..*heads {
                            let p = p_iter.next().expect("one probability matrix per head");
                            let cols = h * dh..(h + 1) * dh;
                            let (qr, kr) = (seg.queries.clone(), seg.keys.clone());
                            let go = g.slice(s![qr.clone(), cols.clone()]);
                            let qh = qv.slice(s![qr.clone(), cols.clone()]);
                            let kh = kv.slice(s![kr.clone(), cols.clone()]);
                            let vh = vv.slice(s![kr.clone(), cols.clone()]);

                            let mut dvh = dv.slice_mut(s![kr.clone(), cols.clone()]);
                            dvh += &p.t().dot(&go);
                            let dp = go.dot(&vh.t());
                            let row_dot = (&dp * p).sum_axis(Axis(1));
                            let ds = (dp - &row_dot.view().insert_axis(Axis(1))) * p * scale;
                            let mut dqh = dq.slice_mut(s![qr, cols.clone()]);
                            dqh += &ds.dot(&kh);
                            let mut dkh = dk.slice_mut(s![kr, cols]);
                            dkh += &ds.t().dot(&qh);
                        }
                    }
                    accumulate(&mut grads, *q, dq);
                    accumulate(&mut grads, *k, dk);
                    accumulate(&mut grads, *v, dv);
                }
                Op::SegmentMean { x, segments } => {
                    let shape = self.values[x.0].dim();
                    let mut dx = Array2::zeros(shape);
                    for (i, r) in segments.iter().enumerate() {
                        let share = &g.row(i) / r.len() as f64;
                        for mut row in dx.slice_mut(s![r.clone(), ..]).rows_mut() {
                            row += &share;
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Dropout { x, mask } => accumulate(&mut grads, *x, &g * mask),
                Op::Loss { inputs, grads: local } => {
                    let up = g[[0, 0]];
                    for (v, lg) in inputs.iter().zip(local) {
                        accumulate(&mut grads, *v, lg * up);
                    }
                }
                Op::WeightedSum(terms) => {
                    let up = g[[0, 0]];
                    for (v, w) in terms {
                        accumulate(&mut grads, *v, Array2::from_elem((1, 1), up * w));
                    }
                }
            }
            grads[i] = Some(g);
        }
        Gradients { grads }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn randn(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(rng))
    }

    /// Checks d(sum(out * weights))/d(leaf) against central differences for
    /// every leaf entry.
    fn check<F>(leaves: Vec<Array2<f64>>, build: F)
    where
        F: Fn(&mut Tape, &[Var]) -> Var,
    {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let probe = {
            let mut t = Tape::new();
            let vars: Vec<Var> = leaves.iter().map(|l| t.leaf(l.clone())).collect();
            let out = build(&mut t, &vars);
            randn(t.value(out).nrows(), t.value(out).ncols(), &mut rng)
        };
        let eval = |ls: &[Array2<f64>]| -> (f64, Option<Vec<Array2<f64>>>) {
            let mut t = Tape::new();
            let vars: Vec<Var> = ls.iter().map(|l| t.leaf(l.clone())).collect();
            let out = build(&mut t, &vars);
            let w = t.leaf(probe.clone());
            let prod = {
                let v = (t.value(out) * t.value(w)).sum();
                let g = probe.clone();
                t.loss(v, vec![out], vec![g])
            };
            let grads = t.backward(prod);
            let gs = vars
                .iter()
                .zip(ls)
                .map(|(v, l)| grads.get(*v).cloned().unwrap_or_else(|| Array2::zeros(l.dim())))
                .collect();
            (t.scalar(prod), Some(gs))
        };
        let (_, analytic) = eval(&leaves);
        let analytic = analytic.unwrap();
        let eps = 1e-6;
        for (li, leaf) in leaves.iter().enumerate() {
            for idx in 0..leaf.len() {
                let (r, c) = (idx / leaf.ncols(), idx % leaf.ncols());
                let mut plus = leaves.clone();
                plus[li][[r, c]] += eps;
                let mut minus = leaves.clone();
                minus[li][[r, c]] -= eps;
                let fd = (eval(&plus).0 - eval(&minus).0) / (2.0 * eps);
                let a = analytic[li][[r, c]];
                assert!(
                    (a - fd).abs() <= 1e-6 * (1.0 + a.abs().max(fd.abs())),
                    "leaf {li} [{r},{c}]: analytic {a} vs numeric {fd}"
                );
            }
        }
    }

    #[test]
    fn linear_and_relu() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        check(vec![randn(4, 3, &mut rng), randn(3, 5, &mut rng), randn(1, 5, &mut rng)], |t, v| {
            let y = t.linear(v[0], v[1], Some(v[2]));
            t.relu(y)
        });
    }

    #[test]
    fn layer_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        check(vec![randn(3, 6, &mut rng), randn(1, 6, &mut rng), randn(1, 6, &mut rng)], |t, v| {
            t.layer_norm(v[0], v[1], v[2])
        });
    }

    #[test]
    fn gather_rows_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        check(vec![randn(5, 4, &mut rng), randn(3, 4, &mut rng)], |t, v| {
            let g = t.gather(v[0], vec![4, 1, 1, 0]);
            let r = t.rows(vec![(g, 0..2), (v[1], 1..3), (g, 3..4)]);
            let s = t.scale(r, 0.5);
            let a = t.add(s, r);
            t.segment_mean(a, vec![0..2, 2..5])
        });
    }

    #[test]
    fn attention_causal_and_cross() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        check(
            vec![randn(5, 4, &mut rng), randn(7, 4, &mut rng), randn(7, 4, &mut rng)],
            |t, v| {
                let own = t.attention(
                    v[0],
                    v[0],
                    v[0],
                    vec![
                        AttnSegment { queries: 0..3, keys: 0..3 },
                        AttnSegment { queries: 3..5, keys: 3..5 },
                    ],
                    2,
                    true,
                );
                t.attention(
                    own,
                    v[1],
                    v[2],
                    vec![
                        AttnSegment { queries: 0..3, keys: 0..4 },
                        AttnSegment { queries: 3..5, keys: 4..7 },
                    ],
                    2,
                    false,
                )
            },
        );
    }

    #[test]
    fn causal_mask_blocks_future() {
        let mut t = Tape::new();
        let q = t.leaf(array![[1.0, 0.0], [0.0, 1.0]]);
        let v = t.leaf(array![[10.0, 0.0], [0.0, 10.0]]);
        let out = t.attention(q, q, v, vec![AttnSegment { queries: 0..2, keys: 0..2 }], 1, true);
        assert_eq!(t.value(out).row(0), array![10.0, 0.0]);
    }

    #[test]
    fn weighted_sum_gradients() {
        let mut t = Tape::new();
        let a = t.leaf(array![[2.0]]);
        let b = t.leaf(array![[3.0]]);
        let s = t.weighted_sum(vec![(a, 1.0), (b, 0.0)]);
        assert_eq!(t.scalar(s), 2.0);
        let g = t.backward(s);
        assert_eq!(g.get(a).unwrap()[[0, 0]], 1.0);
        assert_eq!(g.get(b).unwrap()[[0, 0]], 0.0);
    }

    #[test]
    fn dropout_zero_is_identity() {
        let mut t = Tape::new();
        let a = t.leaf(array![[1.0, 2.0]]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(t.dropout(a, 0.0, &mut rng), a);
        let d = t.dropout(a, 0.5, &mut rng);
        assert!(t.value(d).iter().all(|&v| v == 0.0 || v == 2.0 || v == 4.0));
    }
}
