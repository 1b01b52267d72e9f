//! Reverse-mode differentiation over row-major matrices.
//!
//! A [`Tape`] records every operation of one forward pass. Parameters are
//! referenced from the store rather than copied; their gradients are written
//! into a [`Grads`] buffer by [`Tape::backward`].

use super::params::{Grads, ParamId, ParamStore};
use super::tensor::Mat;
use crate::scalar::Scalar;

pub type NodeId = usize;

const LN_EPS: f64 = 1e-5;

enum Op<T> {
    Input,
    Param(ParamId),
    /// `a * op(b)`.
    MatMul {
        a: NodeId,
        b: NodeId,
        trans_b: bool,
    },
    Add(NodeId, NodeId),
    /// Adds a `1 x n` row to every row.
    AddRow {
        a: NodeId,
        bias: NodeId,
    },
    Scale(NodeId, T),
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Mat<T>,
        inv_std: Vec<T>,
    },
    /// Keeps the inner `tanh` for the backward pass.
    Gelu {
        a: NodeId,
        t: Vec<T>,
    },
    Relu(NodeId),
    SoftmaxRows(NodeId),
    Transpose(NodeId),
    SliceCols {
        a: NodeId,
        start: usize,
    },
    ConcatCols(Vec<NodeId>),
    /// Element-wise multiply by a constant mask (dropout).
    Mask {
        a: NodeId,
        mask: Vec<T>,
    },
    /// `alpha * a + (1 - alpha) * b` with a `1 x 1` alpha.
    Blend {
        alpha: NodeId,
        a: NodeId,
        b: NodeId,
    },
    /// Adds `block` to every consecutive `block.rows`-row slab of `a`.
    AddTiled {
        a: NodeId,
        block: NodeId,
    },
    /// `a_i * op(b_i)` for each of `blocks` equal row slabs of `a` and `b`.
    BlockMatMul {
        a: NodeId,
        b: NodeId,
        trans_b: bool,
        blocks: usize,
    },
    Reshape(NodeId),
}

struct Node<T> {
    value: Option<Mat<T>>,
    op: Op<T>,
}

pub struct Tape<'p, T: Scalar> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_K: f64 = 0.044_715;

fn gelu_tanh<T: Scalar>(x: T) -> T {
    let u = T::lit(GELU_C) * (x + T::lit(GELU_K) * x * x * x);
    // One exp instead of libm's tanh; saturated well before overflow.
    if u.abs() > T::lit(20.0) {
        return u.signum();
    }
    let e = (u + u).exp();
    (e - T::one()) / (e + T::one())
}

/// Derivative given `t = gelu_tanh(x)`.
fn gelu_grad<T: Scalar>(x: T, t: T) -> T {
    let half = T::lit(0.5);
    let (c, k) = (T::lit(GELU_C), T::lit(GELU_K));
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::lit(3.0) * k * x * x)
}

/// `c += op(a) * op(b)` for an `m x k` by `k x n` product of small matrices,
/// where a transposed operand is stored with its dimensions swapped.
#[allow(clippy::too_many_arguments)]
fn small_gemm<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], ta: bool, b: &[T], tb: bool, c: &mut [T]) {
    if tb && !ta {
        for (i, out) in c.chunks_mut(n).take(m).enumerate() {
            let ar = &a[i * k..(i + 1) * k];
            for (j, o) in out.iter_mut().enumerate() {
                *o += ar.iter().zip(&b[j * k..(j + 1) * k]).map(|(x, y)| *x * *y).sum::<T>();
            }
        }
        return;
    }
    for i in 0..m {
        let out = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = if ta { a[p * m + i] } else { a[i * k + p] };
            if tb {
                for (j, o) in out.iter_mut().enumerate() {
                    *o += av * b[j * k + p];
                }
            } else {
                for (o, bv) in out.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                    *o += av * *bv;
                }
            }
        }
    }
}

impl<'p, T: Scalar> Tape<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Self { params, nodes: Vec::with_capacity(256) }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Mat<T> {
        match (&self.nodes[id].value, &self.nodes[id].op) {
            (Some(v), _) => v,
            (None, Op::Param(p)) => self.params.get(*p),
            _ => unreachable!("node without value"),
        }
    }

    fn push(&mut self, value: Mat<T>, op: Op<T>) -> NodeId {
        self.nodes.push(Node { value: Some(value), op });
        self.nodes.len() - 1
    }

    pub fn input(&mut self, value: Mat<T>) -> NodeId {
        self.push(value, Op::Input)
    }

    pub fn param(&mut self, id: ParamId) -> NodeId {
        self.nodes.push(Node { value: None, op: Op::Param(id) });
        self.nodes.len() - 1
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId, trans_b: bool) -> NodeId {
        let v = Mat::matmul(self.value(a), false, self.value(b), trans_b);
        self.push(v, Op::MatMul { a, b, trans_b })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let mut v = self.value(a).clone();
        assert_eq!(v.shape(), self.value(b).shape(), "add shape mismatch");
        v.add_assign(self.value(b));
        self.push(v, Op::Add(a, b))
    }

    pub fn add_row(&mut self, a: NodeId, bias: NodeId) -> NodeId {
        let mut v = self.value(a).clone();
        let b = self.value(bias);
        assert_eq!((b.rows, b.cols), (1, v.cols), "bias shape mismatch");
        for r in 0..v.rows {
            for (x, y) in v.data[r * v.cols..(r + 1) * v.cols].iter_mut().zip(&b.data) {
                *x += *y;
            }
        }
        self.push(v, Op::AddRow { a, bias })
    }

    /// `x * w + b`.
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
        let y = self.matmul(x, w, false);
        self.add_row(y, b)
    }

    pub fn scale(&mut self, a: NodeId, s: T) -> NodeId {
        let v = self.value(a).map(|x| x * s);
        self.push(v, Op::Scale(a, s))
    }

    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> NodeId {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let n = T::lit(cols as f64);
        let mut xhat = Mat::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|v| (*v - mean) * (*v - mean)).sum::<T>() / n;
            let is = T::one() / (var + T::lit(LN_EPS)).sqrt();
            for (c, &v) in row.iter().enumerate() {
                xhat.data[r * cols + c] = (v - mean) * is;
            }
            inv_std.push(is);
        }
        let g = self.value(gamma);
        let b = self.value(beta);
        let y = Mat::from_fn(rows, cols, |r, c| xhat.at(r, c) * g.data[c] + b.data[c]);
        self.push(y, Op::LayerNorm { x, gamma, beta, xhat, inv_std })
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        let t: Vec<T> = av.data.iter().map(|x| gelu_tanh(*x)).collect();
        let half = T::lit(0.5);
        let v =
            Mat::from_vec(av.rows, av.cols, av.data.iter().zip(&t).map(|(x, t)| half * *x * (T::one() + *t)).collect());
        self.push(v, Op::Gelu { a, t })
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x.max(T::zero()));
        self.push(v, Op::Relu(a))
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let mut v = self.value(a).clone();
        let cols = v.cols;
        for row in v.data.chunks_mut(cols) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut s = T::zero();
            for x in row.iter_mut() {
                *x = (*x - m).exp();
                s += *x;
            }
            for x in row.iter_mut() {
                *x /= s;
            }
        }
        self.push(v, Op::SoftmaxRows(a))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let av = self.value(a);
        assert!(start + len <= av.cols, "column slice out of range");
        let v = Mat::from_fn(av.rows, len, |i, j| av.at(i, start + j));
        self.push(v, Op::SliceCols { a, start })
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|p| self.value(*p).cols).sum();
        let mut v = Mat::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.rows, rows, "concat row mismatch");
            for i in 0..rows {
                v.data[i * cols + off..i * cols + off + pv.cols].copy_from_slice(pv.row(i));
            }
            off += pv.cols;
        }
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn mask(&mut self, a: NodeId, mask: Vec<T>) -> NodeId {
        let av = self.value(a);
        assert_eq!(av.len(), mask.len(), "mask length mismatch");
        let v = Mat::from_vec(av.rows, av.cols, av.data.iter().zip(&mask).map(|(x, m)| *x * *m).collect());
        self.push(v, Op::Mask { a, mask })
    }

    pub fn blend(&mut self, alpha: NodeId, a: NodeId, b: NodeId) -> NodeId {
        let al = self.value(alpha).data[0];
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "blend shape mismatch");
        let v = Mat::from_vec(
            av.rows,
            av.cols,
            av.data.iter().zip(&bv.data).map(|(x, y)| al * *x + (T::one() - al) * *y).collect(),
        );
        self.push(v, Op::Blend { alpha, a, b })
    }

    pub fn add_tiled(&mut self, a: NodeId, block: NodeId) -> NodeId {
        let mut v = self.value(a).clone();
        let b = self.value(block);
        assert!(b.cols == v.cols && b.rows > 0 && v.rows.is_multiple_of(b.rows), "tile shape mismatch");
        for slab in v.data.chunks_mut(b.len()) {
            for (x, y) in slab.iter_mut().zip(&b.data) {
                *x += *y;
            }
        }
        self.push(v, Op::AddTiled { a, block })
    }

    pub fn block_matmul(&mut self, a: NodeId, b: NodeId, trans_b: bool, blocks: usize) -> NodeId {
        let (av, bv) = (self.value(a), self.value(b));
        assert!(blocks > 0 && av.rows % blocks == 0 && bv.rows % blocks == 0, "block count mismatch");
        let (ra, rb) = (av.rows / blocks, bv.rows / blocks);
        let (k, n) = if trans_b { (bv.cols, rb) } else { (rb, bv.cols) };
        assert_eq!(av.cols, k, "block matmul inner dimensions differ");
        let mut v = Mat::zeros(av.rows, n);
        for i in 0..blocks {
            small_gemm(
                ra,
                k,
                n,
                &av.data[i * ra * k..(i + 1) * ra * k],
                false,
                &bv.data[i * rb * bv.cols..(i + 1) * rb * bv.cols],
                trans_b,
                &mut v.data[i * ra * n..(i + 1) * ra * n],
            );
        }
        self.push(v, Op::BlockMatMul { a, b, trans_b, blocks })
    }

    pub fn reshape(&mut self, a: NodeId, rows: usize, cols: usize) -> NodeId {
        let v = self.value(a);
        let v = Mat::from_vec(rows, cols, v.data.clone());
        self.push(v, Op::Reshape(a))
    }

    /// Propagates `seed = dL/d(out)` backwards, adding parameter gradients into `grads`.
    pub fn backward(&self, out: NodeId, seed: Mat<T>, grads: &mut Grads<T>) {
        let mut g: Vec<Option<Mat<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        g[out] = Some(seed);
        fn acc<T: Scalar>(slot: &mut Option<Mat<T>>, add: Mat<T>) {
            match slot {
                Some(s) => s.add_assign(&add),
                None => *slot = Some(add),
            }
        }
        for id in (0..=out).rev() {
            let Some(gy) = g[id].take() else { continue };
            match &self.nodes[id].op {
                Op::Input => {}
                Op::Param(p) => grads.tensors[*p].add_assign(&gy),
                Op::MatMul { a, b, trans_b } => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    // dA = dY op(B)^T
                    acc(&mut g[*a], Mat::matmul(&gy, false, bv, !trans_b));
                    // dB = A^T dY, or dY^T A when B entered transposed
                    let gb =
                        if *trans_b { Mat::matmul(&gy, true, av, false) } else { Mat::matmul(av, true, &gy, false) };
                    acc(&mut g[*b], gb);
                }
                Op::Add(a, b) => {
                    acc(&mut g[*b], gy.clone());
                    acc(&mut g[*a], gy);
                }
                Op::AddRow { a, bias } => {
                    let mut gb = Mat::zeros(1, gy.cols);
                    for r in 0..gy.rows {
                        for (s, v) in gb.data.iter_mut().zip(gy.row(r)) {
                            *s += *v;
                        }
                    }
                    acc(&mut g[*bias], gb);
                    acc(&mut g[*a], gy);
                }
                Op::Scale(a, s) => acc(&mut g[*a], gy.map(|v| v * *s)),
                Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                    let (rows, cols) = gy.shape();
                    let gv = self.value(*gamma);
                    let mut dgamma = Mat::zeros(1, cols);
                    let mut dbeta = Mat::zeros(1, cols);
                    let mut dx = Mat::zeros(rows, cols);
                    let n = T::lit(cols as f64);
                    for (r, &is) in inv_std.iter().enumerate() {
                        let (mut m1, mut m2) = (T::zero(), T::zero());
                        for c in 0..cols {
                            let gyv = gy.at(r, c);
                            let xh = xhat.at(r, c);
                            dgamma.data[c] += gyv * xh;
                            dbeta.data[c] += gyv;
                            let d = gyv * gv.data[c];
                            m1 += d;
                            m2 += d * xh;
                        }
                        m1 /= n;
                        m2 /= n;
                        for c in 0..cols {
                            let d = gy.at(r, c) * gv.data[c];
                            dx.data[r * cols + c] = is * (d - m1 - xhat.at(r, c) * m2);
                        }
                    }
                    acc(&mut g[*gamma], dgamma);
                    acc(&mut g[*beta], dbeta);
                    acc(&mut g[*x], dx);
                }
                Op::Gelu { a, t } => {
                    let av = self.value(*a);
                    let d = Mat::from_vec(
                        gy.rows,
                        gy.cols,
                        gy.data.iter().zip(av.data.iter().zip(t)).map(|(g, (x, t))| *g * gelu_grad(*x, *t)).collect(),
                    );
                    acc(&mut g[*a], d);
                }
                Op::Relu(a) => {
                    let av = self.value(*a);
                    let d = Mat::from_vec(
                        gy.rows,
                        gy.cols,
                        gy.data
                            .iter()
                            .zip(&av.data)
                            .map(|(g, x)| if *x > T::zero() { *g } else { T::zero() })
                            .collect(),
                    );
                    acc(&mut g[*a], d);
                }
                Op::SoftmaxRows(a) => {
                    let y = self.value(id);
                    let mut d = Mat::zeros(gy.rows, gy.cols);
                    for r in 0..gy.rows {
                        let dot: T = gy.row(r).iter().zip(y.row(r)).map(|(g, y)| *g * *y).sum();
                        for c in 0..gy.cols {
                            d.data[r * gy.cols + c] = y.at(r, c) * (gy.at(r, c) - dot);
                        }
                    }
                    acc(&mut g[*a], d);
                }
                Op::Transpose(a) => acc(&mut g[*a], gy.transpose()),
                Op::SliceCols { a, start } => {
                    let av = self.value(*a);
                    let mut d = Mat::zeros(av.rows, av.cols);
                    for r in 0..gy.rows {
                        d.data[r * av.cols + start..r * av.cols + start + gy.cols].copy_from_slice(gy.row(r));
                    }
                    acc(&mut g[*a], d);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let w = self.value(p).cols;
                        let d = Mat::from_fn(gy.rows, w, |i, j| gy.at(i, off + j));
                        acc(&mut g[p], d);
                        off += w;
                    }
                }
                Op::Mask { a, mask } => {
                    let d = Mat::from_vec(gy.rows, gy.cols, gy.data.iter().zip(mask).map(|(g, m)| *g * *m).collect());
                    acc(&mut g[*a], d);
                }
                Op::Blend { alpha, a, b } => {
                    let al = self.value(*alpha).data[0];
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let dal: T =
                        gy.data.iter().zip(av.data.iter().zip(&bv.data)).map(|(g, (x, y))| *g * (*x - *y)).sum();
                    acc(&mut g[*alpha], Mat::scalar(dal));
                    acc(&mut g[*a], gy.map(|v| v * al));
                    acc(&mut g[*b], gy.map(|v| v * (T::one() - al)));
                }
                Op::AddTiled { a, block } => {
                    let bv = self.value(*block);
                    let mut gb = Mat::zeros(bv.rows, bv.cols);
                    for slab in gy.data.chunks(bv.len()) {
                        for (s, v) in gb.data.iter_mut().zip(slab) {
                            *s += *v;
                        }
                    }
                    acc(&mut g[*block], gb);
                    acc(&mut g[*a], gy);
                }
                Op::BlockMatMul { a, b, trans_b, blocks } => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (ra, rb) = (av.rows / blocks, bv.rows / blocks);
                    let (k, n) = (av.cols, gy.cols);
                    let mut ga = Mat::zeros(av.rows, av.cols);
                    let mut gb = Mat::zeros(bv.rows, bv.cols);
                    let bl = rb * bv.cols;
                    for i in 0..*blocks {
                        let gyi = &gy.data[i * ra * n..(i + 1) * ra * n];
                        let ai = &av.data[i * ra * k..(i + 1) * ra * k];
                        let bi = &bv.data[i * bl..(i + 1) * bl];
                        // dA = dY op(B)^T
                        small_gemm(ra, n, k, gyi, false, bi, !trans_b, &mut ga.data[i * ra * k..(i + 1) * ra * k]);
                        let gbi = &mut gb.data[i * bl..(i + 1) * bl];
                        if *trans_b {
                            small_gemm(n, ra, k, gyi, true, ai, false, gbi);
                        } else {
                            small_gemm(k, ra, n, ai, true, gyi, false, gbi);
                        }
                    }
                    acc(&mut g[*a], ga);
                    acc(&mut g[*b], gb);
                }
                Op::Reshape(a) => {
                    let (rows, cols) = self.value(*a).shape();
                    acc(&mut g[*a], Mat::from_vec(rows, cols, gy.data));
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Builds `sum(f(params) * weights)` for a fixed readout and checks every
    /// parameter gradient against central differences.
    fn check(build: impl Fn(&mut Tape<f64>, &[NodeId]) -> NodeId, shapes: &[(usize, usize)]) {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::default();
        for (i, (r, c)) in shapes.iter().enumerate() {
            store.insert(format!("p{i}"), Mat::from_fn(*r, *c, |_, _| rng.random_range(-1.0..1.0)));
        }
        let eval = |store: &ParamStore<f64>| -> (f64, Mat<f64>, Grads<f64>) {
            let mut tape = Tape::new(store);
            let ids: Vec<NodeId> = (0..store.len()).map(|p| tape.param(p)).collect();
            let out = build(&mut tape, &ids);
            let y = tape.value(out).clone();
            let w = Mat::from_fn(y.rows, y.cols, |i, j| 0.3 + 0.1 * i as f64 - 0.07 * j as f64);
            let l: f64 = y.data.iter().zip(&w.data).map(|(a, b)| a * b).sum();
            let mut grads = store.zeros_like();
            tape.backward(out, w.clone(), &mut grads);
            (l, w, grads)
        };
        let (_, _, grads) = eval(&store);
        for p in 0..store.len() {
            for e in 0..store.get(p).len() {
                let h = 1e-6;
                let mut plus = store.clone();
                plus.get_mut(p).data[e] += h;
                let mut minus = store.clone();
                minus.get_mut(p).data[e] -= h;
                let fd = (eval(&plus).0 - eval(&minus).0) / (2.0 * h);
                let an = grads.tensors[p].data[e];
                let err = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-3);
                assert!(err < 1e-6, "param {p}[{e}]: analytic {an} fd {fd}");
            }
        }
    }

    #[test]
    fn matmul_and_affine_gradients() {
        check(|t, p| t.matmul(p[0], p[1], false), &[(3, 4), (4, 2)]);
        check(|t, p| t.matmul(p[0], p[1], true), &[(3, 4), (5, 4)]);
        check(|t, p| t.affine(p[0], p[1], p[2]), &[(3, 4), (4, 2), (1, 2)]);
    }

    #[test]
    fn elementwise_gradients() {
        check(|t, p| t.gelu(p[0]), &[(3, 5)]);
        check(
            |t, p| {
                let s = t.scale(p[0], 1.7);
                t.relu(s)
            },
            &[(3, 5)],
        );
        check(|t, p| t.mask(p[0], vec![0.0, 2.0, 1.0, 0.5, 3.0, 0.0]), &[(2, 3)]);
        check(|t, p| t.blend(p[0], p[1], p[2]), &[(1, 1), (1, 6), (1, 6)]);
        check(|t, p| t.add(p[0], p[1]), &[(2, 2), (2, 2)]);
    }

    #[test]
    fn normalization_and_softmax_gradients() {
        check(|t, p| t.layer_norm(p[0], p[1], p[2]), &[(3, 6), (1, 6), (1, 6)]);
        check(|t, p| t.softmax_rows(p[0]), &[(3, 5)]);
        check(
            |t, p| {
                let x = t.transpose(p[0]);
                t.softmax_rows(x)
            },
            &[(4, 1)],
        );
    }

    #[test]
    fn slicing_and_concatenation_gradients() {
        check(
            |t, p| {
                let a = t.slice_cols(p[0], 1, 2);
                let b = t.slice_cols(p[0], 3, 3);
                let c = t.concat_cols(&[b, a]);
                t.gelu(c)
            },
            &[(2, 6)],
        );
    }

    #[test]
    fn batched_op_gradients() {
        check(|t, p| t.add_tiled(p[0], p[1]), &[(6, 3), (2, 3)]);
        check(|t, p| t.block_matmul(p[0], p[1], false, 2), &[(4, 3), (6, 2)]);
        check(|t, p| t.block_matmul(p[0], p[1], true, 3), &[(3, 4), (6, 4)]);
        check(
            |t, p| {
                let r = t.reshape(p[0], 2, 6);
                t.softmax_rows(r)
            },
            &[(4, 3)],
        );
    }

    #[test]
    fn block_matmul_matches_per_block_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = Mat::from_fn(6, 4, |_, _| rng.random_range(-1.0..1.0));
        let b = Mat::from_fn(9, 4, |_, _| rng.random_range(-1.0..1.0));
        let store = ParamStore::default();
        let mut tape = Tape::<f64>::new(&store);
        let (ia, ib) = (tape.input(a.clone()), tape.input(b.clone()));
        let out = tape.block_matmul(ia, ib, true, 3);
        let y = tape.value(out);
        for blk in 0..3 {
            let ai = Mat::from_vec(2, 4, a.data[blk * 8..(blk + 1) * 8].to_vec());
            let bi = Mat::from_vec(3, 4, b.data[blk * 12..(blk + 1) * 12].to_vec());
            let want = Mat::matmul(&ai, false, &bi, true);
            for (u, v) in want.data.iter().zip(&y.data[blk * 6..(blk + 1) * 6]) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn parameters_are_referenced_not_copied() {
        let mut store = ParamStore::default();
        store.insert("w", Mat::from_vec(1, 2, vec![1.0, 2.0]));
        let mut tape = Tape::new(&store);
        let p = tape.param(0);
        assert!(std::ptr::eq(tape.value(p), store.get(0)));
    }
}
