//! Primitive tensor operations and their backward rules.

use super::{debug_check_finite, merged_tape, GradSink, Tape, Tensor};
use crate::scalar::Scalar;
use std::sync::Arc;

fn parents_of(ids: &[Option<usize>]) -> Vec<usize> {
    ids.iter().flatten().copied().collect()
}

#[inline]
pub(crate) fn sigmoid_scalar<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

#[inline]
fn softplus_scalar<S: Scalar>(x: S) -> S {
    if x > S::of_f64(30.0) {
        x
    } else {
        x.exp().ln_1p()
    }
}

impl<S: Scalar> Tensor<S> {
    fn finish(
        &self,
        data: Vec<S>,
        rows: usize,
        cols: usize,
        node: Option<(Tape<S>, usize)>,
    ) -> Tensor<S> {
        let _ = self;
        Tensor::with_node(data, rows, cols, node)
    }

    // ---- elementwise unary ----

    fn unary(
        &self,
        f: impl Fn(S) -> S,
        df: impl Fn(S, S) -> S + 'static,
    ) -> Tensor<S> {
        let out: Vec<S> = self.data().iter().map(|&v| f(v)).collect();
        let out = Arc::new(out);
        let node = self.tape().cloned().map(|tape| {
            let pid = self.node_id().unwrap();
            let x = self.data_arc();
            let y = Arc::clone(&out);
            let len = x.len();
            let id = tape.push_node(
                vec![pid],
                Some(Box::new(move |g, sink: &mut GradSink<S>| {
                    let slot = sink.slot(pid, len);
                    for i in 0..len {
                        slot[i] = slot[i] + g[i] * df(x[i], y[i]);
                    }
                })),
            );
            (tape, id)
        });
        debug_check_finite(&out, "unary op");
        Tensor {
            data: out,
            rows: self.rows(),
            cols: self.cols(),
            node,
        }
    }

    pub fn exp(&self) -> Tensor<S> {
        self.unary(|x| x.exp(), |_, y| y)
    }

    pub fn ln(&self) -> Tensor<S> {
        self.unary(|x| x.ln(), |x, _| S::one() / x)
    }

    /// `ln(max(x, floor))` with zero gradient on the floored region.
    pub fn ln_floor(&self, floor: S) -> Tensor<S> {
        self.unary(
            move |x| x.max(floor).ln(),
            move |x, _| if x > floor { S::one() / x } else { S::zero() },
        )
    }

    pub fn tanh(&self) -> Tensor<S> {
        self.unary(|x| x.tanh(), |_, y| S::one() - y * y)
    }

    pub fn sigmoid(&self) -> Tensor<S> {
        self.unary(sigmoid_scalar, |_, y| y * (S::one() - y))
    }

    /// `max(0, x)`; the subgradient at 0 is taken as 0.
    pub fn relu(&self) -> Tensor<S> {
        self.unary(
            |x| if x > S::zero() { x } else { S::zero() },
            |x, _| if x > S::zero() { S::one() } else { S::zero() },
        )
    }

    pub fn softplus(&self) -> Tensor<S> {
        self.unary(softplus_scalar, |x, _| sigmoid_scalar(x))
    }

    pub fn powf(&self, p: S) -> Tensor<S> {
        self.unary(move |x| x.powf(p), move |x, _| p * x.powf(p - S::one()))
    }

    pub fn scale(&self, c: S) -> Tensor<S> {
        self.unary(move |x| x * c, move |_, _| c)
    }

    pub fn neg(&self) -> Tensor<S> {
        self.scale(-S::one())
    }

    pub fn add_scalar(&self, c: S) -> Tensor<S> {
        self.unary(move |x| x + c, |_, _| S::one())
    }

    // ---- elementwise binary (equal shapes) ----

    fn binary(
        &self,
        rhs: &Tensor<S>,
        name: &'static str,
        f: impl Fn(S, S) -> S,
        dfa: impl Fn(S, S) -> S + 'static,
        dfb: impl Fn(S, S) -> S + 'static,
    ) -> Tensor<S> {
        assert_eq!(
            self.shape(),
            rhs.shape(),
            "invalid input: shape mismatch in {name}: {:?} vs {:?}",
            self.shape(),
            rhs.shape()
        );
        let a = self.data();
        let b = rhs.data();
        let out: Vec<S> = a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect();
        let node = merged_tape(&[self, rhs]).map(|tape| {
            let pa = self.node_id();
            let pb = rhs.node_id();
            let a = self.data_arc();
            let b = rhs.data_arc();
            let len = a.len();
            let id = tape.push_node(
                parents_of(&[pa, pb]),
                Some(Box::new(move |g, sink| {
                    if let Some(ia) = pa {
                        let slot = sink.slot(ia, len);
                        for i in 0..len {
                            slot[i] = slot[i] + g[i] * dfa(a[i], b[i]);
                        }
                    }
                    if let Some(ib) = pb {
                        let slot = sink.slot(ib, len);
                        for i in 0..len {
                            slot[i] = slot[i] + g[i] * dfb(a[i], b[i]);
                        }
                    }
                })),
            );
            (tape, id)
        });
        self.finish(out, self.rows(), self.cols(), node)
    }

    pub fn add(&self, rhs: &Tensor<S>) -> Tensor<S> {
        self.binary(rhs, "add", |a, b| a + b, |_, _| S::one(), |_, _| S::one())
    }

    pub fn sub(&self, rhs: &Tensor<S>) -> Tensor<S> {
        self.binary(rhs, "sub", |a, b| a - b, |_, _| S::one(), |_, _| -S::one())
    }

    pub fn mul(&self, rhs: &Tensor<S>) -> Tensor<S> {
        self.binary(rhs, "mul", |a, b| a * b, |_, b| b, |a, _| a)
    }

    pub fn div(&self, rhs: &Tensor<S>) -> Tensor<S> {
        self.binary(
            rhs,
            "div",
            |a, b| a / b,
            |_, b| S::one() / b,
            |a, b| -a / (b * b),
        )
    }

    // ---- trailing-dimension broadcasts ----

    /// `[T x C] + [1 x C]`, the one sanctioned broadcast (bias addition).
    pub fn add_row(&self, bias: &Tensor<S>) -> Tensor<S> {
        let (t, c) = (self.rows(), self.cols());
        assert_eq!(bias.shape(), [1, c], "invalid input: bias shape mismatch");
        let b = bias.data();
        let mut out = self.data().to_vec();
        for row in out.chunks_mut(c) {
            for (o, &bv) in row.iter_mut().zip(b) {
                *o = *o + bv;
            }
        }
        let node = merged_tape(&[self, bias]).map(|tape| {
            let px = self.node_id();
            let pb = bias.node_id();
            let id = tape.push_node(
                parents_of(&[px, pb]),
                Some(Box::new(move |g, sink| {
                    if let Some(ix) = px {
                        sink.add_scaled(ix, t * c, g, S::one());
                    }
                    if let Some(ib) = pb {
                        let slot = sink.slot(ib, c);
                        for row in g.chunks(c) {
                            for (o, &gv) in slot.iter_mut().zip(row) {
                                *o = *o + gv;
                            }
                        }
                    }
                })),
            );
            (tape, id)
        });
        self.finish(out, t, c, node)
    }

    /// `[T x C] * [1 x C]` elementwise with the row vector broadcast down the
    /// time axis. Differentiable in both operands.
    pub fn mul_row(&self, v: &Tensor<S>) -> Tensor<S> {
        let (t, c) = (self.rows(), self.cols());
        assert_eq!(v.shape(), [1, c], "invalid input: row-vector shape mismatch");
        let vv = v.data();
        let mut out = self.data().to_vec();
        for row in out.chunks_mut(c) {
            for (o, &s) in row.iter_mut().zip(vv) {
                *o = *o * s;
            }
        }
        let node = merged_tape(&[self, v]).map(|tape| {
            let px = self.node_id();
            let pv = v.node_id();
            let x = self.data_arc();
            let vv = v.data_arc();
            let id = tape.push_node(
                parents_of(&[px, pv]),
                Some(Box::new(move |g, sink| {
                    if let Some(ix) = px {
                        let slot = sink.slot(ix, t * c);
                        for (srow, grow) in slot.chunks_mut(c).zip(g.chunks(c)) {
                            for j in 0..c {
                                srow[j] = srow[j] + grow[j] * vv[j];
                            }
                        }
                    }
                    if let Some(iv) = pv {
                        let slot = sink.slot(iv, c);
                        for (grow, xrow) in g.chunks(c).zip(x.chunks(c)) {
                            for j in 0..c {
                                slot[j] = slot[j] + grow[j] * xrow[j];
                            }
                        }
                    }
                })),
            );
            (tape, id)
        });
        self.finish(out, t, c, node)
    }

    // ---- matmul / shape ops ----

    pub fn matmul(&self, rhs: &Tensor<S>) -> Tensor<S> {
        let (m, k) = (self.rows(), self.cols());
        let (k2, n) = (rhs.rows(), rhs.cols());
        assert_eq!(
            k, k2,
            "invalid input: matmul inner dims {k} vs {k2} for {:?} x {:?}",
            self.shape(),
            rhs.shape()
        );
        let mut out = vec![S::zero(); m * n];
        super::kernels::mm_acc(&mut out, self.data(), rhs.data(), m, k, n);
        let node = merged_tape(&[self, rhs]).map(|tape| {
            let pa = self.node_id();
            let pb = rhs.node_id();
            let a = self.data_arc();
            let b = rhs.data_arc();
            let id = tape.push_node(
                parents_of(&[pa, pb]),
                Some(Box::new(move |g, sink| {
                    if let Some(ia) = pa {
                        let slot = sink.slot(ia, m * k);
                        super::kernels::mm_bt_acc(slot, g, &b, m, n, k);
                    }
                    if let Some(ib) = pb {
                        let slot = sink.slot(ib, k * n);
                        super::kernels::mm_at_acc(slot, &a, g, m, k, n);
                    }
                })),
            );
            (tape, id)
        });
        self.finish(out, m, n, node)
    }

    pub fn transpose(&self) -> Tensor<S> {
        let (r, c) = (self.rows(), self.cols());
        let x = self.data();
        let mut out = vec![S::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = x[i * c + j];
            }
        }
        let node = self.tape().cloned().map(|tape| {
            let pid = self.node_id().unwrap();
            let id = tape.push_node(
                vec![pid],
                Some(Box::new(move |g, sink| {
                    let slot = sink.slot(pid, r * c);
                    for i in 0..r {
                        for j in 0..c {
                            slot[i * c + j] = slot[i * c + j] + g[j * r + i];
                        }
                    }
                })),
            );
            (tape, id)
        });
        self.finish(out, c, r, node)
    }

    /// Reinterpret the buffer with a new shape of identical element count.
    pub fn reshape(&self, rows: usize, cols: usize) -> Tensor<S> {
        assert_eq!(
            rows * cols,
            self.numel(),
            "invalid input: reshape changes element count"
        );
        let node = self.tape().cloned().map(|tape| {
            let pid = self.node_id().unwrap();
            let len = self.numel();
            let id = tape.push_node(
                vec![pid],
                Some(Box::new(move |g, sink| {
                    sink.add_scaled(pid, len, g, S::one());
                })),
            );
            (tape, id)
        });
        Tensor {
            data: self.data_arc(),
            rows,
            cols,
            node,
        }
    }

    pub fn concat_rows(parts: &[&Tensor<S>]) -> Tensor<S> {
        assert!(!parts.is_empty(), "invalid input: empty concat");
        let cols = parts[0].cols();
        let mut out = Vec::new();
        for p in parts {
            assert_eq!(p.cols(), cols, "invalid input: concat_rows column mismatch");
            out.extend_from_slice(p.data());
        }
        let rows: usize = parts.iter().map(|p| p.rows()).sum();
        let node = merged_tape(parts).map(|tape| {
            let meta: Vec<(Option<usize>, usize)> =
                parts.iter().map(|p| (p.node_id(), p.numel())).collect();
            let parents = parents_of(&meta.iter().map(|(n, _)| *n).collect::<Vec<_>>());
            let id = tape.push_node(
                parents,
                Some(Box::new(move |g, sink| {
                    let mut off = 0;
                    for &(nid, len) in &meta {
                        if let Some(i) = nid {
                            sink.add_scaled(i, len, &g[off..off + len], S::one());
                        }
                        off += len;
                    }
                })),
            );
            (tape, id)
        });
        Tensor::with_node(out, rows, cols, node)
    }

    pub fn concat_cols(parts: &[&Tensor<S>]) -> Tensor<S> {
        assert!(!parts.is_empty(), "invalid input: empty concat");
        let rows = parts[0].rows();
        let total_cols: usize = parts.iter().map(|p| p.cols()).sum();
        let mut out = vec![S::zero(); rows * total_cols];
        let mut col_off = 0;
        for p in parts {
            assert_eq!(p.rows(), rows, "invalid input: concat_cols row mismatch");
            let c = p.cols();
            for r in 0..rows {
                out[r * total_cols + col_off..r * total_cols + col_off + c]
                    .copy_from_slice(&p.data()[r * c..(r + 1) * c]);
            }
            col_off += c;
        }
        let node = merged_tape(parts).map(|tape| {
            let meta: Vec<(Option<usize>, usize)> =
                parts.iter().map(|p| (p.node_id(), p.cols())).collect();
            let parents = parents_of(&meta.iter().map(|(n, _)| *n).collect::<Vec<_>>());
            let id = tape.push_node(
                parents,
                Some(Box::new(move |g, sink| {
                    let mut col_off = 0;
                    for &(nid, c) in &meta {
                        if let Some(i) = nid {
                            let slot = sink.slot(i, rows * c);
                            for r in 0..rows {
                                for j in 0..c {
                                    slot[r * c + j] =
                                        slot[r * c + j] + g[r * total_cols + col_off + j];
                                }
                            }
                        }
                        col_off += c;
                    }
                })),
            );
            (tape, id)
        });
        Tensor::with_node(out, rows, total_cols, node)
    }

    /// Rows `r0..r1` as a new tensor.
    pub fn slice_rows(&self, r0: usize, r1: usize) -> Tensor<S> {
        assert!(
            r0 < r1 && r1 <= self.rows(),
            "invalid input: row slice {r0}..{r1} of {} rows",
            self.rows()
        );
        let c = self.cols();
        let out = self.data()[r0 * c..r1 * c].to_vec();
        let (rows_in, rows_out) = (self.rows(), r1 - r0);
        let node = self.tape().cloned().map(|tape| {
            let pid = self.node_id().unwrap();
            let id = tape.push_node(
                vec![pid],
                Some(Box::new(move |g, sink| {
                    let slot = sink.slot(pid, rows_in * c);
                    for (o, &gv) in slot[r0 * c..r1 * c].iter_mut().zip(g) {
                        *o = *o + gv;
                    }
                    let _ = rows_out;
                })),
            );
            (tape, id)
        });
        self.finish(out, r1 - r0, c, node)
    }

    /// Columns `c0..c1` as a new tensor.
    pub fn slice_cols(&self, c0: usize, c1: usize) -> Tensor<S> {
        assert!(
            c0 < c1 && c1 <= self.cols(),
            "invalid input: col slice {c0}..{c1} of {} cols",
            self.cols()
        );
        let (r, c) = (self.rows(), self.cols());
        let w = c1 - c0;
        let mut out = vec![S::zero(); r * w];
        for i in 0..r {
            out[i * w..(i + 1) * w].copy_from_slice(&self.data()[i * c + c0..i * c + c1]);
        }
        let node = self.tape().cloned().map(|tape| {
            let pid = self.node_id().unwrap();
            let id = tape.push_node(
                vec![pid],
                Some(Box::new(move |g, sink| {
                    let slot = sink.slot(pid, r * c);
                    for i in 0..r {
                        for j in 0..w {
                            slot[i * c + c0 + j] = slot[i * c + c0 + j] + g[i * w + j];
                        }
                    }
                })),
            );
            (tape, id)
        });
        self.finish(out, r, w, node)
    }

    /// Rows in reverse time order.
    pub fn reverse_rows(&self) -> Tensor<S> {
        let (r, c) = (self.rows(), self.cols());
        let x = self.data();
        let mut out = vec![S::zero(); r * c];
        for i in 0..r {
            out[i * c..(i + 1) * c].copy_from_slice(&x[(r - 1 - i) * c..(r - i) * c]);
        }
        let node = self.tape().cloned().map(|tape| {
            let pid = self.node_id().unwrap();
            let id = tape.push_node(
                vec![pid],
                Some(Box::new(move |g, sink| {
                    let slot = sink.slot(pid, r * c);
                    for i in 0..r {
                        let src = &g[(r - 1 - i) * c..(r - i) * c];
                        for (o, &gv) in slot[i * c..(i + 1) * c].iter_mut().zip(src) {
                            *o = *o + gv;
                        }
                    }
                })),
            );
            (tape, id)
        });
        self.finish(out, r, c, node)
    }

    // ---- reductions ----

    pub fn sum(&self) -> Tensor<S> {
        let total = self.data().iter().fold(S::zero(), |a, &b| a + b);
        let node = self.tape().cloned().map(|tape| {
            let pid = self.node_id().unwrap();
            let len = self.numel();
            let id = tape.push_node(
                vec![pid],
                Some(Box::new(move |g, sink| {
                    let slot = sink.slot(pid, len);
                    for o in slot.iter_mut() {
                        *o = *o + g[0];
                    }
                })),
            );
            (tape, id)
        });
        self.finish(vec![total], 1, 1, node)
    }

    pub fn mean(&self) -> Tensor<S> {
        let n = S::of_usize(self.numel());
        self.sum().scale(S::one() / n)
    }

    /// Column means over the row axis: `[T x C] -> [1 x C]`.
    pub fn mean_rows(&self) -> Tensor<S> {
        let (t, c) = (self.rows(), self.cols());
        let inv = S::one() / S::of_usize(t);
        let mut out = vec![S::zero(); c];
        for row in self.data().chunks(c) {
            for (o, &v) in out.iter_mut().zip(row) {
                *o = *o + v;
            }
        }
        for o in out.iter_mut() {
            *o = *o * inv;
        }
        let node = self.tape().cloned().map(|tape| {
            let pid = self.node_id().unwrap();
            let id = tape.push_node(
                vec![pid],
                Some(Box::new(move |g, sink| {
                    let slot = sink.slot(pid, t * c);
                    for row in slot.chunks_mut(c) {
                        for (o, &gv) in row.iter_mut().zip(g) {
                            *o = *o + gv * inv;
                        }
                    }
                })),
            );
            (tape, id)
        });
        self.finish(out, 1, c, node)
    }

    // ---- row-wise softmax family ----

    pub fn softmax_rows(&self) -> Tensor<S> {
        let (t, c) = (self.rows(), self.cols());
        let mut out = vec![S::zero(); t * c];
        for (orow, xrow) in out.chunks_mut(c).zip(self.data().chunks(c)) {
            let mx = xrow.iter().fold(S::neg_infinity(), |a, &b| a.max(b));
            let mut z = S::zero();
            for (o, &x) in orow.iter_mut().zip(xrow) {
                *o = (x - mx).exp();
                z = z + *o;
            }
            for o in orow.iter_mut() {
                *o = *o / z;
            }
        }
        let out = Arc::new(out);
        let node = self.tape().cloned().map(|tape| {
            let pid = self.node_id().unwrap();
            let y = Arc::clone(&out);
            let id = tape.push_node(
                vec![pid],
                Some(Box::new(move |g, sink| {
                    let slot = sink.slot(pid, t * c);
                    for i in 0..t {
                        let yrow = &y[i * c..(i + 1) * c];
                        let grow = &g[i * c..(i + 1) * c];
                        let mut dot = S::zero();
                        for (&yv, &gv) in yrow.iter().zip(grow) {
                            dot = dot + yv * gv;
                        }
                        let srow = &mut slot[i * c..(i + 1) * c];
                        for j in 0..c {
                            srow[j] = srow[j] + yrow[j] * (grow[j] - dot);
                        }
                    }
                })),
            );
            (tape, id)
        });
        debug_check_finite(&out, "softmax");
        Tensor {
            data: out,
            rows: t,
            cols: c,
            node,
        }
    }

    pub fn log_softmax_rows(&self) -> Tensor<S> {
        let (t, c) = (self.rows(), self.cols());
        let mut out = vec![S::zero(); t * c];
        for (orow, xrow) in out.chunks_mut(c).zip(self.data().chunks(c)) {
            let mx = xrow.iter().fold(S::neg_infinity(), |a, &b| a.max(b));
            let mut z = S::zero();
            for &x in xrow {
                z = z + (x - mx).exp();
            }
            let lz = z.ln() + mx;
            for (o, &x) in orow.iter_mut().zip(xrow) {
                *o = x - lz;
            }
        }
        let out = Arc::new(out);
        let node = self.tape().cloned().map(|tape| {
            let pid = self.node_id().unwrap();
            let y = Arc::clone(&out);
            let id = tape.push_node(
                vec![pid],
                Some(Box::new(move |g, sink| {
                    let slot = sink.slot(pid, t * c);
                    for i in 0..t {
                        let yrow = &y[i * c..(i + 1) * c];
                        let grow = &g[i * c..(i + 1) * c];
                        let gsum = grow.iter().fold(S::zero(), |a, &b| a + b);
                        let srow = &mut slot[i * c..(i + 1) * c];
                        for j in 0..c {
                            srow[j] = srow[j] + grow[j] - yrow[j].exp() * gsum;
                        }
                    }
                })),
            );
            (tape, id)
        });
        debug_check_finite(&out, "log_softmax");
        Tensor {
            data: out,
            rows: t,
            cols: c,
            node,
        }
    }

    // ---- masking / lookup ----

    /// Replace entries where `mask` is true by `value`; gradient flows only
    /// through the untouched entries.
    pub fn masked_fill(&self, mask: &Arc<Vec<bool>>, value: S) -> Tensor<S> {
        assert_eq!(mask.len(), self.numel(), "invalid input: mask shape mismatch");
        let out: Vec<S> = self
            .data()
            .iter()
            .zip(mask.iter())
            .map(|(&x, &m)| if m { value } else { x })
            .collect();
        let node = self.tape().cloned().map(|tape| {
            let pid = self.node_id().unwrap();
            let mask = Arc::clone(mask);
            let len = mask.len();
            let id = tape.push_node(
                vec![pid],
                Some(Box::new(move |g, sink| {
                    let slot = sink.slot(pid, len);
                    for i in 0..len {
                        if !mask[i] {
                            slot[i] = slot[i] + g[i];
                        }
                    }
                })),
            );
            (tape, id)
        });
        self.finish(out, self.rows(), self.cols(), node)
    }

    /// Row gather: treats `self` as an embedding table `[V x d]` and returns
    /// the rows selected by `ids`.
    pub fn gather_rows(&self, ids: &[usize]) -> Tensor<S> {
        let (v, d) = (self.rows(), self.cols());
        for &id in ids {
            assert!(id < v, "invalid input: row index {id} out of range {v}");
        }
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            out.extend_from_slice(&self.data()[id * d..(id + 1) * d]);
        }
        let node = self.tape().cloned().map(|tape| {
            let pid = self.node_id().unwrap();
            let ids = ids.to_vec();
            let id = tape.push_node(
                vec![pid],
                Some(Box::new(move |g, sink| {
                    let slot = sink.slot(pid, v * d);
                    for (r, &row) in ids.iter().enumerate() {
                        let src = &g[r * d..(r + 1) * d];
                        for (o, &gv) in slot[row * d..(row + 1) * d].iter_mut().zip(src) {
                            *o = *o + gv;
                        }
                    }
                })),
            );
            (tape, id)
        });
        self.finish(out, ids.len(), d, node)
    }

    // ---- layer norm ----

    /// Per-row normalization followed by a learned per-column affine map.
    pub fn layer_norm(&self, gain: &Tensor<S>, bias: &Tensor<S>, eps: S) -> Tensor<S> {
        let (t, c) = (self.rows(), self.cols());
        assert_eq!(gain.shape(), [1, c], "invalid input: layer_norm gain shape");
        assert_eq!(bias.shape(), [1, c], "invalid input: layer_norm bias shape");
        let inv_c = S::one() / S::of_usize(c);
        let x = self.data();
        let gdat = gain.data();
        let bdat = bias.data();
        let mut out = vec![S::zero(); t * c];
        let mut xhat = vec![S::zero(); t * c];
        let mut inv_std = vec![S::zero(); t];
        for i in 0..t {
            let xrow = &x[i * c..(i + 1) * c];
            let mu = xrow.iter().fold(S::zero(), |a, &b| a + b) * inv_c;
            let var = xrow
                .iter()
                .fold(S::zero(), |a, &b| a + (b - mu) * (b - mu))
                * inv_c;
            let istd = S::one() / (var + eps).sqrt();
            inv_std[i] = istd;
            for j in 0..c {
                let h = (xrow[j] - mu) * istd;
                xhat[i * c + j] = h;
                out[i * c + j] = h * gdat[j] + bdat[j];
            }
        }
        let xhat = Arc::new(xhat);
        let inv_std = Arc::new(inv_std);
        let node = merged_tape(&[self, gain, bias]).map(|tape| {
            let px = self.node_id();
            let pg = gain.node_id();
            let pb = bias.node_id();
            let xhat = Arc::clone(&xhat);
            let inv_std = Arc::clone(&inv_std);
            let gdat = gain.data_arc();
            let id = tape.push_node(
                parents_of(&[px, pg, pb]),
                Some(Box::new(move |g, sink| {
                    if let Some(ib) = pb {
                        let slot = sink.slot(ib, c);
                        for grow in g.chunks(c) {
                            for (o, &gv) in slot.iter_mut().zip(grow) {
                                *o = *o + gv;
                            }
                        }
                    }
                    if let Some(ig) = pg {
                        let slot = sink.slot(ig, c);
                        for i in 0..t {
                            for j in 0..c {
                                slot[j] = slot[j] + g[i * c + j] * xhat[i * c + j];
                            }
                        }
                    }
                    if let Some(ix) = px {
                        let slot = sink.slot(ix, t * c);
                        for i in 0..t {
                            let hrow = &xhat[i * c..(i + 1) * c];
                            let grow = &g[i * c..(i + 1) * c];
                            // dxhat = g * gain; then project out mean and
                            // the component along xhat
                            let mut mean_dh = S::zero();
                            let mut mean_dh_h = S::zero();
                            for j in 0..c {
                                let dh = grow[j] * gdat[j];
                                mean_dh = mean_dh + dh;
                                mean_dh_h = mean_dh_h + dh * hrow[j];
                            }
                            mean_dh = mean_dh * inv_c;
                            mean_dh_h = mean_dh_h * inv_c;
                            let srow = &mut slot[i * c..(i + 1) * c];
                            for j in 0..c {
                                let dh = grow[j] * gdat[j];
                                srow[j] = srow[j]
                                    + inv_std[i] * (dh - mean_dh - hrow[j] * mean_dh_h);
                            }
                        }
                    }
                })),
            );
            (tape, id)
        });
        self.finish(out, t, c, node)
    }

    // ---- convolutions over the row (time) axis ----

    /// 1-D convolution over time. `self` is `[T x c_in]`, `weight` is
    /// `[c_out x (c_in * k)]` with taps contiguous per input channel, `bias`
    /// is `[1 x c_out]`. Out-of-range taps read as zero.
    pub fn conv1d(
        &self,
        weight: &Tensor<S>,
        bias: Option<&Tensor<S>>,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Tensor<S> {
        let (t, c_in) = (self.rows(), self.cols());
        let c_out = weight.rows();
        assert_eq!(
            weight.cols(),
            c_in * k,
            "invalid input: conv1d weight shape {:?} for c_in={c_in}, k={k}",
            weight.shape()
        );
        if let Some(b) = bias {
            assert_eq!(b.shape(), [1, c_out], "invalid input: conv1d bias shape");
        }
        assert!(t + 2 * pad >= k, "invalid input: conv1d input shorter than kernel");
        let t_out = (t + 2 * pad - k) / stride + 1;
        let x = self.data();
        let w = weight.data();
        let mut out = vec![S::zero(); t_out * c_out];
        for to in 0..t_out {
            for o in 0..c_out {
                let mut acc = bias.map_or(S::zero(), |b| b.data()[o]);
                let wrow = &w[o * c_in * k..(o + 1) * c_in * k];
                for kk in 0..k {
                    let ti = (to * stride + kk) as isize - pad as isize;
                    if ti < 0 || ti >= t as isize {
                        continue;
                    }
                    let xrow = &x[ti as usize * c_in..(ti as usize + 1) * c_in];
                    for i in 0..c_in {
                        acc = acc + xrow[i] * wrow[i * k + kk];
                    }
                }
                out[to * c_out + o] = acc;
            }
        }
        let inputs: Vec<&Tensor<S>> = match bias {
            Some(b) => vec![self, weight, b],
            None => vec![self, weight],
        };
        let node = merged_tape(&inputs).map(|tape| {
            let px = self.node_id();
            let pw = weight.node_id();
            let pb = bias.and_then(|b| b.node_id());
            let x = self.data_arc();
            let w = weight.data_arc();
            let id = tape.push_node(
                parents_of(&[px, pw, pb]),
                Some(Box::new(move |g, sink| {
                    if let Some(ib) = pb {
                        let slot = sink.slot(ib, c_out);
                        for grow in g.chunks(c_out) {
                            for (o, &gv) in slot.iter_mut().zip(grow) {
                                *o = *o + gv;
                            }
                        }
                    }
                    if let Some(iw) = pw {
                        let slot = sink.slot(iw, c_out * c_in * k);
                        for to in 0..t_out {
                            for o in 0..c_out {
                                let gv = g[to * c_out + o];
                                let wrow = &mut slot[o * c_in * k..(o + 1) * c_in * k];
                                for kk in 0..k {
                                    let ti = (to * stride + kk) as isize - pad as isize;
                                    if ti < 0 || ti >= t as isize {
                                        continue;
                                    }
                                    let xrow = &x[ti as usize * c_in..(ti as usize + 1) * c_in];
                                    for i in 0..c_in {
                                        wrow[i * k + kk] = wrow[i * k + kk] + gv * xrow[i];
                                    }
                                }
                            }
                        }
                    }
                    if let Some(ix) = px {
                        let slot = sink.slot(ix, t * c_in);
                        for to in 0..t_out {
                            for o in 0..c_out {
                                let gv = g[to * c_out + o];
                                let wrow = &w[o * c_in * k..(o + 1) * c_in * k];
                                for kk in 0..k {
                                    let ti = (to * stride + kk) as isize - pad as isize;
                                    if ti < 0 || ti >= t as isize {
                                        continue;
                                    }
                                    let srow =
                                        &mut slot[ti as usize * c_in..(ti as usize + 1) * c_in];
                                    for i in 0..c_in {
                                        srow[i] = srow[i] + gv * wrow[i * k + kk];
                                    }
                                }
                            }
                        }
                    }
                })),
            );
            (tape, id)
        });
        self.finish(out, t_out, c_out, node)
    }

    /// Depthwise 1-D convolution with same-padding. `self` is `[T x C]`,
    /// `weight` is `[C x k]` (k odd), optional bias `[1 x C]`.
    pub fn depthwise_conv1d(&self, weight: &Tensor<S>, bias: Option<&Tensor<S>>) -> Tensor<S> {
        let (t, c) = (self.rows(), self.cols());
        let k = weight.cols();
        assert_eq!(weight.rows(), c, "invalid input: depthwise weight channels");
        assert!(k % 2 == 1, "invalid input: depthwise kernel must be odd");
        let pad = (k - 1) / 2;
        let x = self.data();
        let w = weight.data();
        let mut out = vec![S::zero(); t * c];
        for to in 0..t {
            for ch in 0..c {
                let mut acc = bias.map_or(S::zero(), |b| b.data()[ch]);
                for kk in 0..k {
                    let ti = (to + kk) as isize - pad as isize;
                    if ti < 0 || ti >= t as isize {
                        continue;
                    }
                    acc = acc + x[ti as usize * c + ch] * w[ch * k + kk];
                }
                out[to * c + ch] = acc;
            }
        }
        let inputs: Vec<&Tensor<S>> = match bias {
            Some(b) => vec![self, weight, b],
            None => vec![self, weight],
        };
        let node = merged_tape(&inputs).map(|tape| {
            let px = self.node_id();
            let pw = weight.node_id();
            let pb = bias.and_then(|b| b.node_id());
            let x = self.data_arc();
            let w = weight.data_arc();
            let id = tape.push_node(
                parents_of(&[px, pw, pb]),
                Some(Box::new(move |g, sink| {
                    if let Some(ib) = pb {
                        let slot = sink.slot(ib, c);
                        for grow in g.chunks(c) {
                            for (o, &gv) in slot.iter_mut().zip(grow) {
                                *o = *o + gv;
                            }
                        }
                    }
                    if let Some(iw) = pw {
                        let slot = sink.slot(iw, c * k);
                        for to in 0..t {
                            for ch in 0..c {
                                let gv = g[to * c + ch];
                                for kk in 0..k {
                                    let ti = (to + kk) as isize - pad as isize;
                                    if ti < 0 || ti >= t as isize {
                                        continue;
                                    }
                                    slot[ch * k + kk] =
                                        slot[ch * k + kk] + gv * x[ti as usize * c + ch];
                                }
                            }
                        }
                    }
                    if let Some(ix) = px {
                        let slot = sink.slot(ix, t * c);
                        for to in 0..t {
                            for ch in 0..c {
                                let gv = g[to * c + ch];
                                for kk in 0..k {
                                    let ti = (to + kk) as isize - pad as isize;
                                    if ti < 0 || ti >= t as isize {
                                        continue;
                                    }
                                    slot[ti as usize * c + ch] =
                                        slot[ti as usize * c + ch] + gv * w[ch * k + kk];
                                }
                            }
                        }
                    }
                })),
            );
            (tape, id)
        });
        self.finish(out, t, c, node)
    }

    // ---- framing / overlap-add (linear DSP gathers) ----

    /// Slice a `[L x 1]` signal into `[frames x n_fft]` hop-strided windows.
    pub fn frame_signal(&self, n_fft: usize, hop: usize) -> Tensor<S> {
        assert_eq!(self.cols(), 1, "invalid input: frame_signal expects a column signal");
        let l = self.rows();
        assert!(l >= n_fft, "invalid input: signal shorter than one window");
        let frames = 1 + (l - n_fft) / hop;
        let x = self.data();
        let mut out = vec![S::zero(); frames * n_fft];
        for f in 0..frames {
            out[f * n_fft..(f + 1) * n_fft].copy_from_slice(&x[f * hop..f * hop + n_fft]);
        }
        let node = self.tape().cloned().map(|tape| {
            let pid = self.node_id().unwrap();
            let id = tape.push_node(
                vec![pid],
                Some(Box::new(move |g, sink| {
                    let slot = sink.slot(pid, l);
                    for f in 0..frames {
                        let grow = &g[f * n_fft..(f + 1) * n_fft];
                        for (o, &gv) in slot[f * hop..f * hop + n_fft].iter_mut().zip(grow) {
                            *o = *o + gv;
                        }
                    }
                })),
            );
            (tape, id)
        });
        self.finish(out, frames, n_fft, node)
    }

    /// Overlap-add `[frames x n_fft]` back to a `[(frames-1)*hop + n_fft, 1]`
    /// signal.
    pub fn overlap_add(&self, hop: usize) -> Tensor<S> {
        let (frames, n_fft) = (self.rows(), self.cols());
        let l = (frames - 1) * hop + n_fft;
        let x = self.data();
        let mut out = vec![S::zero(); l];
        for f in 0..frames {
            let xrow = &x[f * n_fft..(f + 1) * n_fft];
            for (o, &v) in out[f * hop..f * hop + n_fft].iter_mut().zip(xrow) {
                *o = *o + v;
            }
        }
        let node = self.tape().cloned().map(|tape| {
            let pid = self.node_id().unwrap();
            let id = tape.push_node(
                vec![pid],
                Some(Box::new(move |g, sink| {
                    let slot = sink.slot(pid, frames * n_fft);
                    for f in 0..frames {
                        let srow = &mut slot[f * n_fft..(f + 1) * n_fft];
                        let gseg = &g[f * hop..f * hop + n_fft];
                        for (o, &gv) in srow.iter_mut().zip(gseg) {
                            *o = *o + gv;
                        }
                    }
                })),
            );
            (tape, id)
        });
        self.finish(out, l, 1, node)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity() {
        let a = Tensor::constant(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 3, 2);
        let eye = Tensor::constant(vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], 3, 3);
        let out = eye.matmul(&a);
        assert_eq!(out.data(), a.data());
    }

    #[test]
    fn softmax_of_constant_vector_is_uniform() {
        for n in [1usize, 3, 8] {
            let x = Tensor::constant(vec![0.7; n], 1, n);
            let y = x.softmax_rows();
            for &v in y.data() {
                assert!((v - 1.0 / n as f64).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn log_softmax_matches_log_of_softmax() {
        let vals = vec![0.3f64, -1.2, 2.4, 0.0, 5.1, -3.3, 0.01, 1.7];
        let x = Tensor::constant(vals, 2, 4);
        let a = x.log_softmax_rows();
        let b = x.softmax_rows().ln();
        for (u, v) in a.data().iter().zip(b.data()) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    #[should_panic(expected = "shape mismatch")]
    fn binary_shape_mismatch_panics() {
        let a: Tensor<f64> = Tensor::zeros(2, 3);
        let b: Tensor<f64> = Tensor::zeros(3, 2);
        let _ = a.add(&b);
    }

    #[test]
    #[should_panic(expected = "matmul inner dims")]
    fn matmul_shape_mismatch_panics() {
        let a: Tensor<f64> = Tensor::zeros(2, 3);
        let b: Tensor<f64> = Tensor::zeros(2, 3);
        let _ = a.matmul(&b);
    }

    #[test]
    fn slice_concat_round_trip() {
        let x = Tensor::constant((0..12).map(|i| i as f64).collect(), 3, 4);
        let top = x.slice_rows(0, 1);
        let rest = x.slice_rows(1, 3);
        let back = Tensor::concat_rows(&[&top, &rest]);
        assert_eq!(back.data(), x.data());

        let left = x.slice_cols(0, 2);
        let right = x.slice_cols(2, 4);
        let back = Tensor::concat_cols(&[&left, &right]);
        assert_eq!(back.data(), x.data());
    }

    #[test]
    fn frame_and_overlap_add_shapes() {
        let x = Tensor::constant((0..10).map(|i| i as f64).collect(), 10, 1);
        let frames = x.frame_signal(4, 2);
        assert_eq!(frames.shape(), [4, 4]);
        assert_eq!(frames.at(1, 0), 2.0);
        let back = frames.overlap_add(2);
        assert_eq!(back.shape(), [10, 1]);
        // interior samples are covered by two frames
        assert_eq!(back.at(4, 0), 8.0);
    }

    #[test]
    fn masked_fill_blocks_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(vec![1.0, 2.0, 3.0], 1, 3);
        let mask = Arc::new(vec![false, true, false]);
        let loss = x.masked_fill(&mask, -5.0).sum();
        assert_eq!(loss.item(), 1.0 - 5.0 + 3.0);
        let g = loss.backward().unwrap();
        assert_eq!(g.wrt(&x).unwrap(), &[1.0, 0.0, 1.0]);
    }

    #[test]
    fn gather_rows_scatters_gradient() {
        let tape = Tape::new();
        let w = tape.leaf(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 3, 2);
        let picked = w.gather_rows(&[2, 0, 2]);
        assert_eq!(picked.data(), &[5.0, 6.0, 1.0, 2.0, 5.0, 6.0]);
        let g = picked.sum().backward().unwrap();
        assert_eq!(g.wrt(&w).unwrap(), &[1.0, 1.0, 0.0, 0.0, 2.0, 2.0]);
    }

    #[test]
    fn depthwise_delta_kernel_is_identity() {
        let x = Tensor::constant((0..15).map(|i| (i as f64 * 0.7).sin()).collect(), 5, 3);
        // kernel of size 3 with a centered unit tap
        let w = Tensor::constant(vec![0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0], 3, 3);
        let y = x.depthwise_conv1d(&w, None);
        for (a, b) in x.data().iter().zip(y.data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn conv1d_strided_lengths() {
        // kernel 3, stride 2, pad 1 halves the time axis, rounding up
        for t in [4usize, 5, 6, 7, 16] {
            let x = Tensor::constant(vec![1.0; t * 2], t, 2);
            let w = Tensor::constant(vec![0.5; 3 * 2 * 3], 3, 6);
            let y = x.conv1d(&w, None, 3, 2, 1);
            assert_eq!(y.rows(), t.div_ceil(2), "t={t}");
        }
    }
}
