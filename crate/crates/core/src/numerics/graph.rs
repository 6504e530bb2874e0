//! Reverse-mode gradient tape over dense row-major tensors.
//!
//! A [`Graph`] records every operation of a forward pass as a node holding
//! the computed values plus a closure that scatters the node's output
//! gradient back to its parents. [`Graph::backward`] replays the recording
//! in reverse. Tensors are immutable once written; a [`Tensor`] is a cheap
//! copyable handle into the graph.

use std::rc::Rc;

use super::Scalar;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Tensor {
    id: usize,
}

/// Neighborhood aggregation function.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Aggregate {
    Max,
    Sum,
}

type BackwardFn<T> = Box<dyn Fn(&[T], &mut Grads<T>)>;

struct Node<T> {
    values: Rc<Vec<T>>,
    shape: Vec<usize>,
    requires_grad: bool,
    backward: Option<BackwardFn<T>>,
}

/// Per-node gradient buffers produced by [`Graph::backward`].
pub struct Grads<T> {
    bufs: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Grads<T> {
    /// Gradient of the root with respect to `t`, if any path reached it.
    pub fn get(&self, t: Tensor) -> Option<&[T]> {
        self.bufs[t.id].as_deref()
    }

    fn entry(&mut self, id: usize, len: usize) -> &mut [T] {
        self.bufs[id].get_or_insert_with(|| vec![T::zero(); len])
    }
}

/// The recording tape. All operations append a node and return its handle.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
}

#[inline]
fn axpy<T: Scalar>(y: &mut [T], a: T, x: &[T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (&ai, &bi) in a.iter().zip(b) {
        acc += ai * bi;
    }
    acc
}

fn transpose<T: Scalar>(w: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut t = vec![T::zero(); w.len()];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = w[r * cols + c];
        }
    }
    t
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    fn push(
        &mut self,
        values: Vec<T>,
        shape: Vec<usize>,
        requires_grad: bool,
        backward: Option<BackwardFn<T>>,
    ) -> Tensor {
        debug_assert_eq!(values.len(), shape.iter().product::<usize>());
        let id = self.nodes.len();
        self.nodes.push(Node {
            values: Rc::new(values),
            shape,
            requires_grad,
            backward,
        });
        Tensor { id }
    }

    /// Insert values that do not participate in gradient computation.
    pub fn constant(&mut self, values: Vec<T>, shape: Vec<usize>) -> Tensor {
        self.push(values, shape, false, None)
    }

    /// Insert values whose gradient will be accumulated by [`Graph::backward`].
    pub fn leaf(&mut self, values: Vec<T>, shape: Vec<usize>) -> Tensor {
        self.push(values, shape, true, None)
    }

    pub fn values(&self, t: Tensor) -> &[T] {
        &self.nodes[t.id].values
    }

    pub fn shape(&self, t: Tensor) -> &[usize] {
        &self.nodes[t.id].shape
    }

    pub fn numel(&self, t: Tensor) -> usize {
        self.nodes[t.id].values.len()
    }

    fn rows_cols(&self, t: Tensor) -> (usize, usize) {
        let s = self.shape(t);
        assert_eq!(s.len(), 2, "expected a 2-d tensor, got shape {:?}", s);
        (s[0], s[1])
    }

    fn vals(&self, t: Tensor) -> Rc<Vec<T>> {
        Rc::clone(&self.nodes[t.id].values)
    }

    fn rg(&self, t: Tensor) -> bool {
        self.nodes[t.id].requires_grad
    }

    /// Accumulate gradients of `root` (seeded with ones) into every
    /// reachable gradient-tracked node.
    pub fn backward(&self, root: Tensor) -> Grads<T> {
        let mut grads = Grads {
            bufs: vec![None; self.nodes.len()],
        };
        let n = self.nodes[root.id].values.len();
        grads.bufs[root.id] = Some(vec![T::one(); n]);
        for id in (0..=root.id).rev() {
            if self.nodes[id].backward.is_none() {
                continue;
            }
            let Some(g) = grads.bufs[id].take() else {
                continue;
            };
            (self.nodes[id].backward.as_ref().unwrap())(&g, &mut grads);
            grads.bufs[id] = Some(g);
        }
        grads
    }

    // ── elementwise ─────────────────────────────────────────────────────

    pub fn add(&mut self, a: Tensor, b: Tensor) -> Tensor {
        assert_eq!(self.shape(a), self.shape(b), "add shape mismatch");
        let out: Vec<T> = self
            .values(a)
            .iter()
            .zip(self.values(b))
            .map(|(&x, &y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a) || self.rg(b);
        let (ia, ib, ra, rb) = (a.id, b.id, self.rg(a), self.rg(b));
        let n = out.len();
        let bw: Option<BackwardFn<T>> = rg.then(|| {
            Box::new(move |g: &[T], gr: &mut Grads<T>| {
                if ra {
                    axpy(gr.entry(ia, n), T::one(), g);
                }
                if rb {
                    axpy(gr.entry(ib, n), T::one(), g);
                }
            }) as BackwardFn<T>
        });
        self.push(out, shape, rg, bw)
    }

    pub fn sub(&mut self, a: Tensor, b: Tensor) -> Tensor {
        assert_eq!(self.shape(a), self.shape(b), "sub shape mismatch");
        let out: Vec<T> = self
            .values(a)
            .iter()
            .zip(self.values(b))
            .map(|(&x, &y)| x - y)
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a) || self.rg(b);
        let (ia, ib, ra, rb) = (a.id, b.id, self.rg(a), self.rg(b));
        let n = out.len();
        let bw: Option<BackwardFn<T>> = rg.then(|| {
            Box::new(move |g: &[T], gr: &mut Grads<T>| {
                if ra {
                    axpy(gr.entry(ia, n), T::one(), g);
                }
                if rb {
                    axpy(gr.entry(ib, n), -T::one(), g);
                }
            }) as BackwardFn<T>
        });
        self.push(out, shape, rg, bw)
    }

    pub fn mul(&mut self, a: Tensor, b: Tensor) -> Tensor {
        assert_eq!(self.shape(a), self.shape(b), "mul shape mismatch");
        let av = self.vals(a);
        let bv = self.vals(b);
        let out: Vec<T> = av.iter().zip(bv.iter()).map(|(&x, &y)| x * y).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a) || self.rg(b);
        let (ia, ib, ra, rb) = (a.id, b.id, self.rg(a), self.rg(b));
        let n = out.len();
        let bw: Option<BackwardFn<T>> = rg.then(|| {
            Box::new(move |g: &[T], gr: &mut Grads<T>| {
                if ra {
                    let dst = gr.entry(ia, n);
                    for ((d, &gi), &y) in dst.iter_mut().zip(g).zip(bv.iter()) {
                        *d += gi * y;
                    }
                }
                if rb {
                    let dst = gr.entry(ib, n);
                    for ((d, &gi), &x) in dst.iter_mut().zip(g).zip(av.iter()) {
                        *d += gi * x;
                    }
                }
            }) as BackwardFn<T>
        });
        self.push(out, shape, rg, bw)
    }

    /// Multiply by a compile-time-constant scalar.
    pub fn scale(&mut self, a: Tensor, c: T) -> Tensor {
        let out: Vec<T> = self.values(a).iter().map(|&x| x * c).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a);
        let ia = a.id;
        let n = out.len();
        let bw: Option<BackwardFn<T>> = rg.then(|| {
            Box::new(move |g: &[T], gr: &mut Grads<T>| {
                axpy(gr.entry(ia, n), c, g);
            }) as BackwardFn<T>
        });
        self.push(out, shape, rg, bw)
    }

    /// Elementwise multiply by a constant mask (dropout and branch gating).
    pub fn mul_mask(&mut self, a: Tensor, mask: Vec<T>) -> Tensor {
        assert_eq!(self.numel(a), mask.len(), "mask length mismatch");
        let mask = Rc::new(mask);
        let out: Vec<T> = self
            .values(a)
            .iter()
            .zip(mask.iter())
            .map(|(&x, &m)| x * m)
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a);
        let ia = a.id;
        let n = out.len();
        let bw: Option<BackwardFn<T>> = rg.then(|| {
            let mask = Rc::clone(&mask);
            Box::new(move |g: &[T], gr: &mut Grads<T>| {
                let dst = gr.entry(ia, n);
                for ((d, &gi), &m) in dst.iter_mut().zip(g).zip(mask.iter()) {
                    *d += gi * m;
                }
            }) as BackwardFn<T>
        });
        self.push(out, shape, rg, bw)
    }

    /// Rectifier with a configurable negative slope; slope 1 is the identity.
    pub fn leaky_relu(&mut self, a: Tensor, slope: f64) -> Tensor {
        let s = T::from_f64(slope);
        let av = self.vals(a);
        let out: Vec<T> = av
            .iter()
            .map(|&x| if x > T::zero() { x } else { x * s })
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a);
        let ia = a.id;
        let n = out.len();
        let bw: Option<BackwardFn<T>> = rg.then(|| {
            Box::new(move |g: &[T], gr: &mut Grads<T>| {
                let dst = gr.entry(ia, n);
                for ((d, &gi), &x) in dst.iter_mut().zip(g).zip(av.iter()) {
                    *d += if x > T::zero() { gi } else { gi * s };
                }
            }) as BackwardFn<T>
        });
        self.push(out, shape, rg, bw)
    }

    // ── linear maps ─────────────────────────────────────────────────────

    /// `x [R,Cin] · w[Cout,Cin]ᵀ + b[Cout] -> [R,Cout]`.
    pub fn affine(&mut self, x: Tensor, w: Tensor, b: Tensor) -> Tensor {
        let (rows, cin) = self.rows_cols(x);
        let (cout, win) = self.rows_cols(w);
        assert_eq!(
            cin,
            win,
            "affine width mismatch: input {:?} vs weight {:?}",
            self.shape(x),
            self.shape(w)
        );
        assert_eq!(self.numel(b), cout, "affine bias length mismatch");
        let xv = self.vals(x);
        let wv = self.vals(w);
        let bv = self.vals(b);
        let wt = transpose(&wv, cout, cin);
        let mut out = vec![T::zero(); rows * cout];
        for r in 0..rows {
            let xrow = &xv[r * cin..(r + 1) * cin];
            let orow = &mut out[r * cout..(r + 1) * cout];
            orow.copy_from_slice(&bv);
            for (i, &xi) in xrow.iter().enumerate() {
                axpy(orow, xi, &wt[i * cout..(i + 1) * cout]);
            }
        }
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        let (ix, iw, ib) = (x.id, w.id, b.id);
        let (rx, rw, rb) = (self.rg(x), self.rg(w), self.rg(b));
        let bw: Option<BackwardFn<T>> = rg.then(|| {
            let xv = Rc::clone(&xv);
            let wv = Rc::clone(&wv);
            Box::new(move |g: &[T], gr: &mut Grads<T>| {
                if rx {
                    let dx = gr.entry(ix, rows * cin);
                    for r in 0..rows {
                        let grow = &g[r * cout..(r + 1) * cout];
                        let dxrow = &mut dx[r * cin..(r + 1) * cin];
                        for (o, &gv) in grow.iter().enumerate() {
                            axpy(dxrow, gv, &wv[o * cin..(o + 1) * cin]);
                        }
                    }
                }
                if rw {
                    let dw = gr.entry(iw, cout * cin);
                    for r in 0..rows {
                        let grow = &g[r * cout..(r + 1) * cout];
                        let xrow = &xv[r * cin..(r + 1) * cin];
                        for (o, &gv) in grow.iter().enumerate() {
                            axpy(&mut dw[o * cin..(o + 1) * cin], gv, xrow);
                        }
                    }
                }
                if rb {
                    let db = gr.entry(ib, cout);
                    for r in 0..rows {
                        axpy(db, T::one(), &g[r * cout..(r + 1) * cout]);
                    }
                }
            }) as BackwardFn<T>
        });
        self.push(out, vec![rows, cout], rg, bw)
    }

    /// `a [M,D] · b[N,D]ᵀ -> [M,N]` (pairwise row dot products).
    pub fn matmul_nt(&mut self, a: Tensor, b: Tensor) -> Tensor {
        let (m, d) = self.rows_cols(a);
        let (n, d2) = self.rows_cols(b);
        assert_eq!(
            d,
            d2,
            "matmul_nt width mismatch: {:?} vs {:?}",
            self.shape(a),
            self.shape(b)
        );
        let av = self.vals(a);
        let bv = self.vals(b);
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let arow = &av[i * d..(i + 1) * d];
            let orow = &mut out[i * n..(i + 1) * n];
            for (j, o) in orow.iter_mut().enumerate() {
                *o = dot(arow, &bv[j * d..(j + 1) * d]);
            }
        }
        let rg = self.rg(a) || self.rg(b);
        let (ia, ib) = (a.id, b.id);
        let (ra, rb) = (self.rg(a), self.rg(b));
        let bw: Option<BackwardFn<T>> = rg.then(|| {
            let av = Rc::clone(&av);
            let bv = Rc::clone(&bv);
            Box::new(move |g: &[T], gr: &mut Grads<T>| {
                if ra {
                    let da = gr.entry(ia, m * d);
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        let darow = &mut da[i * d..(i + 1) * d];
                        for (j, &gv) in grow.iter().enumerate() {
                            axpy(darow, gv, &bv[j * d..(j + 1) * d]);
                        }
                    }
                }
                if rb {
                    let db = gr.entry(ib, n * d);
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        let arow = &av[i * d..(i + 1) * d];
                        for (j, &gv) in grow.iter().enumerate() {
                            axpy(&mut db[j * d..(j + 1) * d], gv, arow);
                        }
                    }
                }
            }) as BackwardFn<T>
        });
        self.push(out, vec![m, n], rg, bw)
    }

    // ── gathering and layout ────────────────────────────────────────────

    /// Select whole rows: `out[i, :] = x[idx[i], :]`.
    pub fn gather_rows(&mut self, x: Tensor, idx: &[usize]) -> Tensor {
        let (rows, cols) = self.rows_cols(x);
        let xv = self.vals(x);
        let mut out = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            assert!(i < rows, "gather_rows index {} out of {}", i, rows);
            out.extend_from_slice(&xv[i * cols..(i + 1) * cols]);
        }
        let rg = self.rg(x);
        let ix = x.id;
        let idx = Rc::new(idx.to_vec());
        let m = idx.len();
        let bw: Option<BackwardFn<T>> = rg.then(|| {
            let idx = Rc::clone(&idx);
            Box::new(move |g: &[T], gr: &mut Grads<T>| {
                let dx = gr.entry(ix, rows * cols);
                for (j, &i) in idx.iter().enumerate() {
                    axpy(
                        &mut dx[i * cols..(i + 1) * cols],
                        T::one(),
                        &g[j * cols..(j + 1) * cols],
                    );
                }
            }) as BackwardFn<T>
        });
        self.push(out, vec![m, cols], rg, bw)
    }

    /// Select scalars by flat index; output is 1-d of length `idx.len()`.
    pub fn gather_elems(&mut self, x: Tensor, idx: &[usize]) -> Tensor {
        let n = self.numel(x);
        let xv = self.vals(x);
        let out: Vec<T> = idx
            .iter()
            .map(|&i| {
                assert!(i < n, "gather_elems index {} out of {}", i, n);
                xv[i]
            })
            .collect();
        let rg = self.rg(x);
        let ix = x.id;
        let idx = Rc::new(idx.to_vec());
        let m = idx.len();
        let bw: Option<BackwardFn<T>> = rg.then(|| {
            let idx = Rc::clone(&idx);
            Box::new(move |g: &[T], gr: &mut Grads<T>| {
                let dx = gr.entry(ix, n);
                for (j, &i) in idx.iter().enumerate() {
                    dx[i] += g[j];
                }
            }) as BackwardFn<T>
        });
        self.push(out, vec![m], rg, bw)
    }

    /// Reinterpret the same values under a new shape (no copy of the data).
    pub fn reshape(&mut self, x: Tensor, shape: Vec<usize>) -> Tensor {
        assert_eq!(
            self.numel(x),
            shape.iter().product::<usize>(),
            "reshape element count mismatch: {:?} -> {:?}",
            self.shape(x),
            shape
        );
        let xv = self.vals(x);
        let rg = self.rg(x);
        let ix = x.id;
        let n = xv.len();
        let id = self.nodes.len();
        self.nodes.push(Node {
            values: xv,
            shape,
            requires_grad: rg,
            backward: rg.then(|| {
                Box::new(move |g: &[T], gr: &mut Grads<T>| {
                    axpy(gr.entry(ix, n), T::one(), g);
                }) as BackwardFn<T>
            }),
        });
        Tensor { id }
    }

    /// Copy a contiguous row range `[start, start+len)`.
    pub fn slice_rows(&mut self, x: Tensor, start: usize, len: usize) -> Tensor {
        let (rows, cols) = self.rows_cols(x);
        assert!(start + len <= rows, "slice_rows out of range");
        let out = self.values(x)[start * cols..(start + len) * cols].to_vec();
        let rg = self.rg(x);
        let ix = x.id;
        let bw: Option<BackwardFn<T>> = rg.then(|| {
            Box::new(move |g: &[T], gr: &mut Grads<T>| {
                let dx = gr.entry(ix, rows * cols);
                axpy(&mut dx[start * cols..(start + len) * cols], T::one(), g);
            }) as BackwardFn<T>
        });
        self.push(out, vec![len, cols], rg, bw)
    }

    /// Stack parts vertically; all parts must share the column count.
    pub fn concat_rows(&mut self, parts: &[Tensor]) -> Tensor {
        assert!(!parts.is_empty(), "concat_rows needs at least one part");
        let cols = self.rows_cols(parts[0]).1;
        let mut out = Vec::new();
        let mut meta = Vec::with_capacity(parts.len());
        let mut rg = false;
        for &p in parts {
            let (r, c) = self.rows_cols(p);
            assert_eq!(c, cols, "concat_rows column mismatch");
            out.extend_from_slice(self.values(p));
            meta.push((p.id, r, self.rg(p)));
            rg |= self.rg(p);
        }
        let total: usize = meta.iter().map(|&(_, r, _)| r).sum();
        let bw: Option<BackwardFn<T>> = rg.then(|| {
            let meta = meta.clone();
            Box::new(move |g: &[T], gr: &mut Grads<T>| {
                let mut ofs = 0;
                for &(id, r, prg) in &meta {
                    if prg {
                        axpy(gr.entry(id, r * cols), T::one(), &g[ofs..ofs + r * cols]);
                    }
                    ofs += r * cols;
                }
            }) as BackwardFn<T>
        });
        self.push(out, vec![total, cols], rg, bw)
    }

    /// Stack two tensors side by side along the feature axis.
    pub fn concat_cols(&mut self, a: Tensor, b: Tensor) -> Tensor {
        let (rows, ca) = self.rows_cols(a);
        let (rb, cb) = self.rows_cols(b);
        assert_eq!(rows, rb, "concat_cols row mismatch");
        let av = self.vals(a);
        let bv = self.vals(b);
        let mut out = Vec::with_capacity(rows * (ca + cb));
        for r in 0..rows {
            out.extend_from_slice(&av[r * ca..(r + 1) * ca]);
            out.extend_from_slice(&bv[r * cb..(r + 1) * cb]);
        }
        let rg = self.rg(a) || self.rg(b);
        let (ia, ib) = (a.id, b.id);
        let (ra, rbg) = (self.rg(a), self.rg(b));
        let bw: Option<BackwardFn<T>> = rg.then(|| {
            Box::new(move |g: &[T], gr: &mut Grads<T>| {
                let w = ca + cb;
                if ra {
                    let da = gr.entry(ia, rows * ca);
                    for r in 0..rows {
                        axpy(
                            &mut da[r * ca..(r + 1) * ca],
                            T::one(),
                            &g[r * w..r * w + ca],
                        );
                    }
                }
                if rbg {
                    let db = gr.entry(ib, rows * cb);
                    for r in 0..rows {
                        axpy(
                            &mut db[r * cb..(r + 1) * cb],
                            T::one(),
                            &g[r * w + ca..(r + 1) * w],
                        );
                    }
                }
            }) as BackwardFn<T>
        });
        self.push(out, vec![rows, ca + cb], rg, bw)
    }

    // ── reductions ──────────────────────────────────────────────────────

    /// Per-channel reduction over consecutive row groups of length `seg_len`.
    ///
    /// Input `[G·seg_len, C]` reduces to `[G, C]`. `Max` remembers the first
    /// maximal row per channel; `Sum` adds rows in their stored order.
    pub fn segment_reduce(&mut self, x: Tensor, seg_len: usize, agg: Aggregate) -> Tensor {
        let (rows, cols) = self.rows_cols(x);
        assert!(seg_len >= 1, "segment length must be at least 1");
        assert_eq!(
            rows % seg_len,
            0,
            "rows {} not divisible by {}",
            rows,
            seg_len
        );
        let groups = rows / seg_len;
        let xv = self.vals(x);
        match agg {
            Aggregate::Sum => {
                let mut out = vec![T::zero(); groups * cols];
                for gi in 0..groups {
                    let orow = &mut out[gi * cols..(gi + 1) * cols];
                    for l in 0..seg_len {
                        let r = gi * seg_len + l;
                        axpy(orow, T::one(), &xv[r * cols..(r + 1) * cols]);
                    }
                }
                let rg = self.rg(x);
                let ix = x.id;
                let bw: Option<BackwardFn<T>> = rg.then(|| {
                    Box::new(move |g: &[T], gr: &mut Grads<T>| {
                        let dx = gr.entry(ix, rows * cols);
                        for gi in 0..groups {
                            let grow = &g[gi * cols..(gi + 1) * cols];
                            for l in 0..seg_len {
                                let r = gi * seg_len + l;
                                axpy(&mut dx[r * cols..(r + 1) * cols], T::one(), grow);
                            }
                        }
                    }) as BackwardFn<T>
                });
                self.push(out, vec![groups, cols], rg, bw)
            }
            Aggregate::Max => {
                let mut out = vec![T::zero(); groups * cols];
                let mut arg = vec![0usize; groups * cols];
                for gi in 0..groups {
                    let base = gi * seg_len;
                    out[gi * cols..(gi + 1) * cols]
                        .copy_from_slice(&xv[base * cols..(base + 1) * cols]);
                    for e in arg[gi * cols..(gi + 1) * cols].iter_mut() {
                        *e = base;
                    }
                    for l in 1..seg_len {
                        let r = base + l;
                        for c in 0..cols {
                            let v = xv[r * cols + c];
                            if v > out[gi * cols + c] {
                                out[gi * cols + c] = v;
                                arg[gi * cols + c] = r;
                            }
                        }
                    }
                }
                let rg = self.rg(x);
                let ix = x.id;
                let arg = Rc::new(arg);
                let bw: Option<BackwardFn<T>> = rg.then(|| {
                    let arg = Rc::clone(&arg);
                    Box::new(move |g: &[T], gr: &mut Grads<T>| {
                        let dx = gr.entry(ix, rows * cols);
                        for gi in 0..groups {
                            for c in 0..cols {
                                let r = arg[gi * cols + c];
                                dx[r * cols + c] += g[gi * cols + c];
                            }
                        }
                    }) as BackwardFn<T>
                });
                self.push(out, vec![groups, cols], rg, bw)
            }
        }
    }

    /// Scale row `r` of `x` by the scalar `s[r]`.
    pub fn mul_rowwise(&mut self, x: Tensor, s: Tensor) -> Tensor {
        let (rows, cols) = self.rows_cols(x);
        assert_eq!(
            self.numel(s),
            rows,
            "mul_rowwise expects one scalar per row: {:?} vs {:?}",
            self.shape(x),
            self.shape(s)
        );
        let xv = self.vals(x);
        let sv = self.vals(s);
        let mut out = vec![T::zero(); rows * cols];
        for r in 0..rows {
            let sr = sv[r];
            for c in 0..cols {
                out[r * cols + c] = xv[r * cols + c] * sr;
            }
        }
        let rg = self.rg(x) || self.rg(s);
        let (ix, is) = (x.id, s.id);
        let (rx, rs) = (self.rg(x), self.rg(s));
        let bw: Option<BackwardFn<T>> = rg.then(|| {
            let xv = Rc::clone(&xv);
            let sv = Rc::clone(&sv);
            Box::new(move |g: &[T], gr: &mut Grads<T>| {
                if rx {
                    let dx = gr.entry(ix, rows * cols);
                    for r in 0..rows {
                        axpy(
                            &mut dx[r * cols..(r + 1) * cols],
                            sv[r],
                            &g[r * cols..(r + 1) * cols],
                        );
                    }
                }
                if rs {
                    let ds = gr.entry(is, rows);
                    for r in 0..rows {
                        ds[r] += dot(&g[r * cols..(r + 1) * cols], &xv[r * cols..(r + 1) * cols]);
                    }
                }
            }) as BackwardFn<T>
        });
        self.push(out, vec![rows, cols], rg, bw)
    }

    /// Sum of every element; output has shape `[1]`.
    pub fn sum_all(&mut self, x: Tensor) -> Tensor {
        let total: T = self.values(x).iter().copied().sum();
        let rg = self.rg(x);
        let ix = x.id;
        let n = self.numel(x);
        let bw: Option<BackwardFn<T>> = rg.then(|| {
            Box::new(move |g: &[T], gr: &mut Grads<T>| {
                let dx = gr.entry(ix, n);
                for d in dx.iter_mut() {
                    *d += g[0];
                }
            }) as BackwardFn<T>
        });
        self.push(vec![total], vec![1], rg, bw)
    }

    // ── normalization, softmax, loss ────────────────────────────────────

    /// Batch normalization over rows using batch statistics.
    ///
    /// Returns the normalized tensor and the per-column batch mean and
    /// biased variance (for the caller's running-statistics update).
    pub fn batch_norm_train(
        &mut self,
        x: Tensor,
        gamma: Tensor,
        beta: Tensor,
        eps: f64,
    ) -> (Tensor, Vec<T>, Vec<T>) {
        let (rows, cols) = self.rows_cols(x);
        assert!(rows >= 1, "batch norm needs at least one row");
        assert_eq!(self.numel(gamma), cols, "batch norm gamma width mismatch");
        assert_eq!(self.numel(beta), cols, "batch norm beta width mismatch");
        let xv = self.vals(x);
        let gv = self.vals(gamma);
        let bv = self.vals(beta);
        let inv_r = T::from_f64(1.0 / rows as f64);
        let mut mean = vec![T::zero(); cols];
        for r in 0..rows {
            axpy(&mut mean, T::one(), &xv[r * cols..(r + 1) * cols]);
        }
        for m in mean.iter_mut() {
            *m *= inv_r;
        }
        let mut var = vec![T::zero(); cols];
        for r in 0..rows {
            for c in 0..cols {
                let d = xv[r * cols + c] - mean[c];
                var[c] += d * d;
            }
        }
        for v in var.iter_mut() {
            *v *= inv_r;
        }
        let epst = T::from_f64(eps);
        let invstd: Vec<T> = var.iter().map(|&v| (v + epst).sqrt().recip()).collect();
        let mut xhat = vec![T::zero(); rows * cols];
        let mut out = vec![T::zero(); rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                let h = (xv[r * cols + c] - mean[c]) * invstd[c];
                xhat[r * cols + c] = h;
                out[r * cols + c] = gv[c] * h + bv[c];
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let (ix, ig, ib) = (x.id, gamma.id, beta.id);
        let (rx, rgm, rbt) = (self.rg(x), self.rg(gamma), self.rg(beta));
        let xhat = Rc::new(xhat);
        let invstd_rc = Rc::new(invstd);
        let bw: Option<BackwardFn<T>> = rg.then(|| {
            let xhat = Rc::clone(&xhat);
            let invstd = Rc::clone(&invstd_rc);
            let gv = Rc::clone(&gv);
            Box::new(move |g: &[T], gr: &mut Grads<T>| {
                // dbeta and dgamma are plain column sums.
                if rbt {
                    let db = gr.entry(ib, cols);
                    for r in 0..rows {
                        axpy(db, T::one(), &g[r * cols..(r + 1) * cols]);
                    }
                }
                if rgm {
                    let dg = gr.entry(ig, cols);
                    for r in 0..rows {
                        for c in 0..cols {
                            dg[c] += g[r * cols + c] * xhat[r * cols + c];
                        }
                    }
                }
                if rx {
                    // dxhat = g * gamma; dx folds the mean/variance paths.
                    let mut sum_dh = vec![T::zero(); cols];
                    let mut sum_dh_h = vec![T::zero(); cols];
                    for r in 0..rows {
                        for c in 0..cols {
                            let dh = g[r * cols + c] * gv[c];
                            sum_dh[c] += dh;
                            sum_dh_h[c] += dh * xhat[r * cols + c];
                        }
                    }
                    let dx = gr.entry(ix, rows * cols);
                    for r in 0..rows {
                        for c in 0..cols {
                            let dh = g[r * cols + c] * gv[c];
                            dx[r * cols + c] += invstd[c]
                                * (dh
                                    - inv_r * sum_dh[c]
                                    - xhat[r * cols + c] * inv_r * sum_dh_h[c]);
                        }
                    }
                }
            }) as BackwardFn<T>
        });
        let mean_out = mean;
        let var_out = var;
        let t = self.push(out, vec![rows, cols], rg, bw);
        (t, mean_out, var_out)
    }

    /// Batch normalization using fixed running statistics (evaluation).
    pub fn batch_norm_eval(
        &mut self,
        x: Tensor,
        gamma: Tensor,
        beta: Tensor,
        running_mean: &[T],
        running_var: &[T],
        eps: f64,
    ) -> Tensor {
        let (rows, cols) = self.rows_cols(x);
        assert_eq!(running_mean.len(), cols, "running mean width mismatch");
        assert_eq!(running_var.len(), cols, "running var width mismatch");
        let xv = self.vals(x);
        let gv = self.vals(gamma);
        let bv = self.vals(beta);
        let epst = T::from_f64(eps);
        let inv: Vec<T> = running_var
            .iter()
            .map(|&v| (v + epst).sqrt().recip())
            .collect();
        let rm = running_mean.to_vec();
        let mut xhat = vec![T::zero(); rows * cols];
        let mut out = vec![T::zero(); rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                let h = (xv[r * cols + c] - rm[c]) * inv[c];
                xhat[r * cols + c] = h;
                out[r * cols + c] = gv[c] * h + bv[c];
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let (ix, ig, ib) = (x.id, gamma.id, beta.id);
        let (rx, rgm, rbt) = (self.rg(x), self.rg(gamma), self.rg(beta));
        let xhat = Rc::new(xhat);
        let inv = Rc::new(inv);
        let bw: Option<BackwardFn<T>> = rg.then(|| {
            let xhat = Rc::clone(&xhat);
            let inv = Rc::clone(&inv);
            let gv = Rc::clone(&gv);
            Box::new(move |g: &[T], gr: &mut Grads<T>| {
                if rbt {
                    let db = gr.entry(ib, cols);
                    for r in 0..rows {
                        axpy(db, T::one(), &g[r * cols..(r + 1) * cols]);
                    }
                }
                if rgm {
                    let dg = gr.entry(ig, cols);
                    for r in 0..rows {
                        for c in 0..cols {
                            dg[c] += g[r * cols + c] * xhat[r * cols + c];
                        }
                    }
                }
                if rx {
                    let dx = gr.entry(ix, rows * cols);
                    for r in 0..rows {
                        for c in 0..cols {
                            dx[r * cols + c] += g[r * cols + c] * gv[c] * inv[c];
                        }
                    }
                }
            }) as BackwardFn<T>
        });
        self.push(out, vec![rows, cols], rg, bw)
    }

    /// Numerically stabilized softmax along `axis`.
    pub fn softmax_axis(&mut self, x: Tensor, axis: usize) -> Tensor {
        let shape = self.shape(x).to_vec();
        assert!(
            axis < shape.len(),
            "softmax axis {} out of rank {}",
            axis,
            shape.len()
        );
        let extent = shape[axis];
        assert!(extent > 0, "softmax over an empty axis");
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let xv = self.vals(x);
        let mut out = vec![T::zero(); xv.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |l: usize| o * extent * inner + l * inner + i;
                let mut m = xv[at(0)];
                for l in 1..extent {
                    m = m.max(xv[at(l)]);
                }
                let mut s = T::zero();
                for l in 0..extent {
                    let e = (xv[at(l)] - m).exp();
                    out[at(l)] = e;
                    s += e;
                }
                let si = s.recip();
                for l in 0..extent {
                    out[at(l)] *= si;
                }
            }
        }
        let rg = self.rg(x);
        let ix = x.id;
        let yv = Rc::new(out);
        let n = yv.len();
        let bw: Option<BackwardFn<T>> = rg.then(|| {
            let yv = Rc::clone(&yv);
            Box::new(move |g: &[T], gr: &mut Grads<T>| {
                let dx = gr.entry(ix, n);
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |l: usize| o * extent * inner + l * inner + i;
                        let mut dentry = T::zero();
                        for l in 0..extent {
                            dentry += g[at(l)] * yv[at(l)];
                        }
                        for l in 0..extent {
                            dx[at(l)] += yv[at(l)] * (g[at(l)] - dentry);
                        }
                    }
                }
            }) as BackwardFn<T>
        });
        let id = self.nodes.len();
        self.nodes.push(Node {
            values: yv,
            shape,
            requires_grad: rg,
            backward: bw,
        });
        Tensor { id }
    }

    /// Mean negative log-probability of the true classes; shape `[1]`.
    pub fn cross_entropy_loss(&mut self, logits: Tensor, labels: &[usize]) -> Tensor {
        let (rows, classes) = self.rows_cols(logits);
        assert_eq!(labels.len(), rows, "one label per logits row");
        let xv = self.vals(logits);
        let mut probs = vec![T::zero(); rows * classes];
        let mut total = T::zero();
        for r in 0..rows {
            let row = &xv[r * classes..(r + 1) * classes];
            let m = row.iter().copied().fold(row[0], T::max);
            let mut s = T::zero();
            for c in 0..classes {
                let e = (row[c] - m).exp();
                probs[r * classes + c] = e;
                s += e;
            }
            let si = s.recip();
            for c in 0..classes {
                probs[r * classes + c] *= si;
            }
            let lse = m + s.ln();
            total += lse - row[labels[r]];
        }
        let loss = total * T::from_f64(1.0 / rows as f64);
        let rg = self.rg(logits);
        let ix = logits.id;
        let probs = Rc::new(probs);
        let labels = Rc::new(labels.to_vec());
        let bw: Option<BackwardFn<T>> = rg.then(|| {
            let probs = Rc::clone(&probs);
            let labels = Rc::clone(&labels);
            Box::new(move |g: &[T], gr: &mut Grads<T>| {
                let scale = g[0] * T::from_f64(1.0 / rows as f64);
                let dx = gr.entry(ix, rows * classes);
                for r in 0..rows {
                    for c in 0..classes {
                        let onehot = if c == labels[r] { T::one() } else { T::zero() };
                        dx[r * classes + c] += scale * (probs[r * classes + c] - onehot);
                    }
                }
            }) as BackwardFn<T>
        });
        self.push(vec![loss], vec![1], rg, bw)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph() -> Graph<f64> {
        Graph::new()
    }

    #[test]
    fn affine_matches_hand_computation() {
        let mut g = graph();
        let x = g.leaf(vec![1.0, 2.0, 3.0, 4.0], vec![2, 2]);
        let w = g.leaf(vec![1.0, 0.0, 1.0, 1.0, 0.5, -1.0], vec![3, 2]);
        let b = g.leaf(vec![0.1, 0.2, 0.3], vec![3]);
        let y = g.affine(x, w, b);
        assert_eq!(g.shape(y), &[2, 3]);
        let v = g.values(y);
        assert!((v[0] - 1.1).abs() < 1e-12);
        assert!((v[1] - 3.2).abs() < 1e-12);
        assert!((v[2] - (0.5 - 2.0 + 0.3)).abs() < 1e-12);
    }

    #[test]
    fn backward_through_chain() {
        // loss = sum(leaky(x*y)) with x=2, y=3 -> d/dx = y, d/dy = x (positive branch)
        let mut g = graph();
        let x = g.leaf(vec![2.0], vec![1]);
        let y = g.leaf(vec![3.0], vec![1]);
        let p = g.mul(x, y);
        let a = g.leaky_relu(p, 0.2);
        let loss = g.sum_all(a);
        let grads = g.backward(loss);
        assert_eq!(grads.get(x).unwrap(), &[3.0]);
        assert_eq!(grads.get(y).unwrap(), &[2.0]);
    }

    #[test]
    fn segment_max_tracks_first_argmax() {
        let mut g = graph();
        let x = g.leaf(vec![1.0, 7.0, 7.0, 5.0, 5.0, 7.0], vec![3, 2]);
        let m = g.segment_reduce(x, 3, Aggregate::Max);
        assert_eq!(g.values(m), &[7.0, 7.0]);
        let s = g.sum_all(m);
        let grads = g.backward(s);
        // col 0 max at row 1; col 1 ties at rows 0 and 2, first occurrence wins.
        assert_eq!(grads.get(x).unwrap(), &[0.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn softmax_shift_invariance() {
        let mut g = graph();
        let x = g.constant(vec![0.3, -1.2, 2.5, 0.0], vec![1, 4]);
        let shifted = g.constant(vec![0.3 + 7.0, -1.2 + 7.0, 2.5 + 7.0, 7.0], vec![1, 4]);
        let a = g.softmax_axis(x, 1);
        let b = g.softmax_axis(shifted, 1);
        for (u, v) in g.values(a).iter().zip(g.values(b)) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let mut g = graph();
        let x = g.leaf(vec![0.0; 8], vec![2, 4]);
        let loss = g.cross_entropy_loss(x, &[1, 3]);
        assert!((g.values(loss)[0] - (4.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn reshape_shares_and_routes_gradient() {
        let mut g = graph();
        let x = g.leaf(vec![1.0, 2.0, 3.0, 4.0], vec![2, 2]);
        let r = g.reshape(x, vec![4]);
        let s = g.sum_all(r);
        let grads = g.backward(s);
        assert_eq!(grads.get(x).unwrap(), &[1.0; 4]);
    }
}
