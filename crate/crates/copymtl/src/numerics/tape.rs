//! Reverse-mode automatic differentiation over [`DenseArray`] values.
//!
//! A [`Tape`] records array-valued operations during a forward pass and
//! replays them in reverse to accumulate gradients into the originating
//! [`ParamStore`]. Hot operations that would otherwise explode into many
//! small nodes (LSTM cell, attention scoring, copy scoring) are fused
//! into single nodes with hand-written backward rules; everything is
//! checked against central finite differences in the test suite.
//!
//! An inference tape (`Tape::inference()`) runs the same forward code
//! without storing backward closures.

// indexed loops over parallel slices are the clearer form in these kernels
#![allow(clippy::needless_range_loop)]

use std::collections::HashMap;

use super::array::{
    logsumexp_slice, selu_grad_scalar, selu_scalar, sigmoid_scalar, softmax_slice, DenseArray,
};
use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

/// Backward rule: reads forward values, receives the output gradient,
/// accumulates into input gradients.
type BackFn = Box<dyn Fn(&[DenseArray], &DenseArray, &mut GradSlots)>;

struct GradSlots {
    slots: Vec<Option<DenseArray>>,
}

impl GradSlots {
    fn add_to(&mut self, values: &[DenseArray], node: NodeId, f: impl FnOnce(&mut [f64])) {
        let slot = self.slots[node.0]
            .get_or_insert_with(|| DenseArray::zeros(values[node.0].shape().to_vec()));
        f(slot.values_mut());
    }
}

pub struct Tape {
    values: Vec<DenseArray>,
    backs: Vec<Option<BackFn>>,
    recording: bool,
    backward_done: bool,
    param_leaves: Vec<(NodeId, ParamId, Option<usize>)>,
    param_cache: HashMap<ParamId, NodeId>,
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            values: Vec::new(),
            backs: Vec::new(),
            recording: true,
            backward_done: false,
            param_leaves: Vec::new(),
            param_cache: HashMap::new(),
        }
    }

    /// A tape that evaluates forward values only; `backward` is unavailable.
    pub fn inference() -> Self {
        let mut t = Tape::new();
        t.recording = false;
        t
    }

    pub fn value(&self, n: NodeId) -> &DenseArray {
        &self.values[n.0]
    }

    pub fn scalar(&self, n: NodeId) -> f64 {
        self.values[n.0].scalar_value()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn push(&mut self, value: DenseArray, back: impl FnOnce() -> BackFn) -> NodeId {
        let id = NodeId(self.values.len());
        self.values.push(value);
        if self.recording {
            self.backs.push(Some(back()));
        } else {
            self.backs.push(None);
        }
        id
    }

    fn push_leaf(&mut self, value: DenseArray) -> NodeId {
        let id = NodeId(self.values.len());
        self.values.push(value);
        self.backs.push(None);
        id
    }

    // ── Leaves ───────────────────────────────────────────────────────

    pub fn constant(&mut self, value: DenseArray) -> NodeId {
        self.push_leaf(value)
    }

    pub fn constant_scalar(&mut self, v: f64) -> NodeId {
        self.push_leaf(DenseArray::scalar(v))
    }

    /// Leaf for a whole parameter. Cached: repeated use on one tape
    /// yields the same node, so the value is cloned once per tape.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        if let Some(&n) = self.param_cache.get(&id) {
            return n;
        }
        let n = self.push_leaf(store.value(id).clone());
        self.param_cache.insert(id, n);
        self.param_leaves.push((n, id, None));
        n
    }

    /// Leaf for one row of a matrix parameter (embedding lookups).
    /// Gradients flow back into just that row.
    pub fn param_row(&mut self, store: &ParamStore, id: ParamId, row: usize) -> NodeId {
        let value = DenseArray::vector(store.value(id).row(row).to_vec());
        let n = self.push_leaf(value);
        self.param_leaves.push((n, id, Some(row)));
        n
    }

    // ── Elementwise and linear ops ───────────────────────────────────

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(
            self.values[a.0].shape(),
            self.values[b.0].shape(),
            "add: shape mismatch"
        );
        let v = DenseArray::new(
            self.values[a.0].shape().to_vec(),
            self.values[a.0]
                .values()
                .iter()
                .zip(self.values[b.0].values())
                .map(|(x, y)| x + y)
                .collect(),
        )
        .expect("add shape");
        self.push(v, || {
            Box::new(move |vals, gout, g| {
                g.add_to(vals, a, |ga| {
                    for (x, y) in ga.iter_mut().zip(gout.values()) {
                        *x += y;
                    }
                });
                g.add_to(vals, b, |gb| {
                    for (x, y) in gb.iter_mut().zip(gout.values()) {
                        *x += y;
                    }
                });
            })
        })
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(
            self.values[a.0].shape(),
            self.values[b.0].shape(),
            "sub: shape mismatch"
        );
        let v = DenseArray::new(
            self.values[a.0].shape().to_vec(),
            self.values[a.0]
                .values()
                .iter()
                .zip(self.values[b.0].values())
                .map(|(x, y)| x - y)
                .collect(),
        )
        .expect("sub shape");
        self.push(v, || {
            Box::new(move |vals, gout, g| {
                g.add_to(vals, a, |ga| {
                    for (x, y) in ga.iter_mut().zip(gout.values()) {
                        *x += y;
                    }
                });
                g.add_to(vals, b, |gb| {
                    for (x, y) in gb.iter_mut().zip(gout.values()) {
                        *x -= y;
                    }
                });
            })
        })
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(
            self.values[a.0].shape(),
            self.values[b.0].shape(),
            "mul: shape mismatch"
        );
        let v = DenseArray::new(
            self.values[a.0].shape().to_vec(),
            self.values[a.0]
                .values()
                .iter()
                .zip(self.values[b.0].values())
                .map(|(x, y)| x * y)
                .collect(),
        )
        .expect("mul shape");
        self.push(v, || {
            Box::new(move |vals, gout, g| {
                g.add_to(vals, a, |ga| {
                    for i in 0..ga.len() {
                        ga[i] += gout.values()[i] * vals[b.0].values()[i];
                    }
                });
                g.add_to(vals, b, |gb| {
                    for i in 0..gb.len() {
                        gb[i] += gout.values()[i] * vals[a.0].values()[i];
                    }
                });
            })
        })
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> NodeId {
        let v = DenseArray::new(
            self.values[a.0].shape().to_vec(),
            self.values[a.0].values().iter().map(|x| x * k).collect(),
        )
        .expect("scale shape");
        self.push(v, || {
            Box::new(move |vals, gout, g| {
                g.add_to(vals, a, |ga| {
                    for (x, y) in ga.iter_mut().zip(gout.values()) {
                        *x += k * y;
                    }
                });
            })
        })
    }

    /// Sum of a list of same-shape nodes.
    pub fn add_all(&mut self, xs: &[NodeId]) -> NodeId {
        assert!(!xs.is_empty(), "add_all of empty list");
        let mut acc = xs[0];
        for &x in &xs[1..] {
            acc = self.add(acc, x);
        }
        acc
    }

    /// Row-vector times matrix: `[r] x [r, c] -> [c]`.
    pub fn vecmat(&mut self, x: NodeId, w: NodeId) -> NodeId {
        let (xv, wv) = (&self.values[x.0], &self.values[w.0]);
        assert_eq!(wv.shape().len(), 2, "vecmat: w must be a matrix");
        let (r, c) = (wv.rows(), wv.cols());
        assert_eq!(xv.len(), r, "vecmat: inner dim mismatch");
        let mut out = vec![0.0; c];
        for i in 0..r {
            let xi = xv.at(i);
            if xi != 0.0 {
                let wrow = wv.row(i);
                for j in 0..c {
                    out[j] += xi * wrow[j];
                }
            }
        }
        self.push(DenseArray::vector(out), || {
            Box::new(move |vals, gout, g| {
                let gy = gout.values();
                let (r, c) = (vals[w.0].rows(), vals[w.0].cols());
                g.add_to(vals, x, |gx| {
                    for i in 0..r {
                        let wrow = vals[w.0].row(i);
                        let mut s = 0.0;
                        for j in 0..c {
                            s += wrow[j] * gy[j];
                        }
                        gx[i] += s;
                    }
                });
                g.add_to(vals, w, |gw| {
                    for i in 0..r {
                        let xi = vals[x.0].at(i);
                        if xi != 0.0 {
                            let grow = &mut gw[i * c..(i + 1) * c];
                            for j in 0..c {
                                grow[j] += xi * gy[j];
                            }
                        }
                    }
                });
            })
        })
    }

    /// Fused `[a; b] x w` for `w: [len(a)+len(b), c]`, avoiding an
    /// explicit concatenation node.
    pub fn concat_matmul(&mut self, a: NodeId, b: NodeId, w: NodeId) -> NodeId {
        let (av, bv, wv) = (&self.values[a.0], &self.values[b.0], &self.values[w.0]);
        let (p, q) = (av.len(), bv.len());
        assert_eq!(wv.rows(), p + q, "concat_matmul: row dim mismatch");
        let c = wv.cols();
        let mut out = vec![0.0; c];
        for i in 0..p {
            let xi = av.at(i);
            let wrow = wv.row(i);
            for j in 0..c {
                out[j] += xi * wrow[j];
            }
        }
        for i in 0..q {
            let xi = bv.at(i);
            let wrow = wv.row(p + i);
            for j in 0..c {
                out[j] += xi * wrow[j];
            }
        }
        self.push(DenseArray::vector(out), || {
            Box::new(move |vals, gout, g| {
                let gy = gout.values();
                let (p, q) = (vals[a.0].len(), vals[b.0].len());
                let c = vals[w.0].cols();
                g.add_to(vals, a, |ga| {
                    for i in 0..p {
                        let wrow = vals[w.0].row(i);
                        let mut s = 0.0;
                        for j in 0..c {
                            s += wrow[j] * gy[j];
                        }
                        ga[i] += s;
                    }
                });
                g.add_to(vals, b, |gb| {
                    for i in 0..q {
                        let wrow = vals[w.0].row(p + i);
                        let mut s = 0.0;
                        for j in 0..c {
                            s += wrow[j] * gy[j];
                        }
                        gb[i] += s;
                    }
                });
                g.add_to(vals, w, |gw| {
                    for i in 0..p {
                        let xi = vals[a.0].at(i);
                        let grow = &mut gw[i * c..(i + 1) * c];
                        for j in 0..c {
                            grow[j] += xi * gy[j];
                        }
                    }
                    for i in 0..q {
                        let xi = vals[b.0].at(i);
                        let grow = &mut gw[(p + i) * c..(p + i + 1) * c];
                        for j in 0..c {
                            grow[j] += xi * gy[j];
                        }
                    }
                });
            })
        })
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(
            self.values[a.0].len(),
            self.values[b.0].len(),
            "dot: length mismatch"
        );
        let s: f64 = self.values[a.0]
            .values()
            .iter()
            .zip(self.values[b.0].values())
            .map(|(x, y)| x * y)
            .sum();
        self.push(DenseArray::scalar(s), || {
            Box::new(move |vals, gout, g| {
                let go = gout.scalar_value();
                g.add_to(vals, a, |ga| {
                    for i in 0..ga.len() {
                        ga[i] += go * vals[b.0].values()[i];
                    }
                });
                g.add_to(vals, b, |gb| {
                    for i in 0..gb.len() {
                        gb[i] += go * vals[a.0].values()[i];
                    }
                });
            })
        })
    }

    // ── Nonlinearities ───────────────────────────────────────────────

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = DenseArray::new(
            self.values[a.0].shape().to_vec(),
            self.values[a.0].values().iter().map(|x| x.tanh()).collect(),
        )
        .expect("tanh shape");
        self.push(v, || {
            Box::new(move |vals, gout, g| {
                let out = gout.values().to_vec();
                g.add_to(vals, a, |ga| {
                    // reading y from the consumer side: recompute tanh(x)
                    for i in 0..ga.len() {
                        let y = vals[a.0].values()[i].tanh();
                        ga[i] += out[i] * (1.0 - y * y);
                    }
                });
            })
        })
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = DenseArray::new(
            self.values[a.0].shape().to_vec(),
            self.values[a.0]
                .values()
                .iter()
                .map(|&x| sigmoid_scalar(x))
                .collect(),
        )
        .expect("sigmoid shape");
        self.push(v, || {
            Box::new(move |vals, gout, g| {
                let out = gout.values().to_vec();
                g.add_to(vals, a, |ga| {
                    for i in 0..ga.len() {
                        let y = sigmoid_scalar(vals[a.0].values()[i]);
                        ga[i] += out[i] * y * (1.0 - y);
                    }
                });
            })
        })
    }

    pub fn selu(&mut self, a: NodeId) -> NodeId {
        let v = DenseArray::new(
            self.values[a.0].shape().to_vec(),
            self.values[a.0]
                .values()
                .iter()
                .map(|&x| selu_scalar(x))
                .collect(),
        )
        .expect("selu shape");
        self.push(v, || {
            Box::new(move |vals, gout, g| {
                let out = gout.values().to_vec();
                g.add_to(vals, a, |ga| {
                    for i in 0..ga.len() {
                        ga[i] += out[i] * selu_grad_scalar(vals[a.0].values()[i]);
                    }
                });
            })
        })
    }

    // ── Shape ops ────────────────────────────────────────────────────

    pub fn concat(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let mut v = self.values[a.0].values().to_vec();
        v.extend_from_slice(self.values[b.0].values());
        self.push(DenseArray::vector(v), || {
            Box::new(move |vals, gout, g| {
                let p = vals[a.0].len();
                g.add_to(vals, a, |ga| {
                    for i in 0..p {
                        ga[i] += gout.values()[i];
                    }
                });
                g.add_to(vals, b, |gb| {
                    for i in 0..gb.len() {
                        gb[i] += gout.values()[p + i];
                    }
                });
            })
        })
    }

    pub fn slice(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let v = DenseArray::vector(self.values[a.0].values()[start..start + len].to_vec());
        self.push(v, || {
            Box::new(move |vals, gout, g| {
                g.add_to(vals, a, |ga| {
                    for i in 0..len {
                        ga[start + i] += gout.values()[i];
                    }
                });
            })
        })
    }

    pub fn row(&mut self, a: NodeId, r: usize) -> NodeId {
        let c = self.values[a.0].cols();
        self.slice(a, r * c, c)
    }

    pub fn col(&mut self, a: NodeId, j: usize) -> NodeId {
        let (r, c) = (self.values[a.0].rows(), self.values[a.0].cols());
        let v: Vec<f64> = (0..r).map(|i| self.values[a.0].at2(i, j)).collect();
        self.push(DenseArray::vector(v), || {
            Box::new(move |vals, gout, g| {
                g.add_to(vals, a, |ga| {
                    for i in 0..r {
                        ga[i * c + j] += gout.values()[i];
                    }
                });
            })
        })
    }

    pub fn pick(&mut self, a: NodeId, i: usize) -> NodeId {
        let v = DenseArray::scalar(self.values[a.0].at(i));
        self.push(v, || {
            Box::new(move |vals, gout, g| {
                g.add_to(vals, a, |ga| {
                    ga[i] += gout.scalar_value();
                });
            })
        })
    }

    /// Stack `[1]`-shaped nodes into a vector.
    pub fn stack(&mut self, xs: &[NodeId]) -> NodeId {
        let v: Vec<f64> = xs.iter().map(|&n| self.values[n.0].scalar_value()).collect();
        let xs = xs.to_vec();
        self.push(DenseArray::vector(v), || {
            Box::new(move |vals, gout, g| {
                for (i, &n) in xs.iter().enumerate() {
                    let gi = gout.values()[i];
                    g.add_to(vals, n, |gn| {
                        gn[0] += gi;
                    });
                }
            })
        })
    }

    /// Stack equal-length vector nodes into an `[n, c]` matrix.
    pub fn stack_rows(&mut self, xs: &[NodeId]) -> NodeId {
        assert!(!xs.is_empty(), "stack_rows of empty list");
        let c = self.values[xs[0].0].len();
        let mut v = Vec::with_capacity(xs.len() * c);
        for &n in xs {
            assert_eq!(self.values[n.0].len(), c, "stack_rows: ragged rows");
            v.extend_from_slice(self.values[n.0].values());
        }
        let n_rows = xs.len();
        let xs = xs.to_vec();
        self.push(
            DenseArray::new(vec![n_rows, c], v).expect("stack_rows shape"),
            || {
                Box::new(move |vals, gout, g| {
                    for (i, &n) in xs.iter().enumerate() {
                        let grow = &gout.values()[i * c..(i + 1) * c];
                        g.add_to(vals, n, |gn| {
                            for j in 0..c {
                                gn[j] += grow[j];
                            }
                        });
                    }
                })
            },
        )
    }

    /// Replace positions where `keep` is false with `fill`; gradients do
    /// not flow through filled positions.
    pub fn mask_fill(&mut self, a: NodeId, keep: Vec<bool>, fill: f64) -> NodeId {
        assert_eq!(self.values[a.0].len(), keep.len(), "mask_fill: length mismatch");
        let v: Vec<f64> = self.values[a.0]
            .values()
            .iter()
            .zip(&keep)
            .map(|(&x, &k)| if k { x } else { fill })
            .collect();
        self.push(DenseArray::vector(v), || {
            Box::new(move |vals, gout, g| {
                g.add_to(vals, a, |ga| {
                    for i in 0..ga.len() {
                        if keep[i] {
                            ga[i] += gout.values()[i];
                        }
                    }
                });
            })
        })
    }

    // ── Reductions and probability ops ───────────────────────────────

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.values[a.0].values().iter().sum();
        self.push(DenseArray::scalar(s), || {
            Box::new(move |vals, gout, g| {
                let go = gout.scalar_value();
                g.add_to(vals, a, |ga| {
                    for x in ga.iter_mut() {
                        *x += go;
                    }
                });
            })
        })
    }

    /// Stable log(sum(exp(x))) reduced to a scalar node.
    pub fn logsumexp(&mut self, a: NodeId) -> NodeId {
        assert!(!self.values[a.0].is_empty(), "logsumexp of empty input");
        let y = logsumexp_slice(self.values[a.0].values());
        self.push(DenseArray::scalar(y), || {
            Box::new(move |vals, gout, g| {
                let go = gout.scalar_value();
                let x = vals[a.0].values();
                let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let denom: f64 = x.iter().map(|&v| (v - m).exp()).sum();
                g.add_to(vals, a, |ga| {
                    for i in 0..ga.len() {
                        ga[i] += go * (x[i] - m).exp() / denom;
                    }
                });
            })
        })
    }

    /// Stable softmax over a vector node.
    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        let p = softmax_slice(self.values[a.0].values()).expect("softmax of empty input");
        self.push(DenseArray::vector(p), || {
            Box::new(move |vals, gout, g| {
                let y = softmax_slice(vals[a.0].values()).expect("softmax back");
                let gy = gout.values();
                let dotp: f64 = y.iter().zip(gy).map(|(a, b)| a * b).sum();
                g.add_to(vals, a, |ga| {
                    for i in 0..ga.len() {
                        ga[i] += y[i] * (gy[i] - dotp);
                    }
                });
            })
        })
    }

    /// Cross entropy of a target index under logits:
    /// `logsumexp(logits) - logits[target]`.
    pub fn cross_entropy(&mut self, logits: NodeId, target: usize) -> NodeId {
        let lse = self.logsumexp(logits);
        let t = self.pick(logits, target);
        self.sub(lse, t)
    }

    // ── Fused network ops ────────────────────────────────────────────

    /// One LSTM cell step. Gate layout along the `4H` axis is
    /// `[input | forget | candidate | output]`. Output node is the
    /// concatenation `[h'; c']` of length `2H`; slice it apart.
    pub fn lstm_cell(
        &mut self,
        x: NodeId,
        h: NodeId,
        c: NodeId,
        wx: NodeId,
        wh: NodeId,
        bias: NodeId,
    ) -> NodeId {
        let hidden = self.values[h.0].len();
        let in_dim = self.values[x.0].len();
        assert_eq!(self.values[c.0].len(), hidden, "lstm_cell: c dim");
        assert_eq!(self.values[wx.0].shape(), &[in_dim, 4 * hidden], "lstm_cell: wx shape");
        assert_eq!(self.values[wh.0].shape(), &[hidden, 4 * hidden], "lstm_cell: wh shape");
        assert_eq!(self.values[bias.0].len(), 4 * hidden, "lstm_cell: bias len");

        let mut pre = self.values[bias.0].values().to_vec();
        {
            let xv = self.values[x.0].values();
            let wxv = &self.values[wx.0];
            for i in 0..in_dim {
                let xi = xv[i];
                if xi != 0.0 {
                    let row = wxv.row(i);
                    for j in 0..4 * hidden {
                        pre[j] += xi * row[j];
                    }
                }
            }
            let hv = self.values[h.0].values();
            let whv = &self.values[wh.0];
            for i in 0..hidden {
                let hi = hv[i];
                if hi != 0.0 {
                    let row = whv.row(i);
                    for j in 0..4 * hidden {
                        pre[j] += hi * row[j];
                    }
                }
            }
        }

        let mut gates = vec![0.0; 4 * hidden]; // activated: i, f, g, o
        for k in 0..hidden {
            gates[k] = sigmoid_scalar(pre[k]);
            gates[hidden + k] = sigmoid_scalar(pre[hidden + k]);
            gates[2 * hidden + k] = pre[2 * hidden + k].tanh();
            gates[3 * hidden + k] = sigmoid_scalar(pre[3 * hidden + k]);
        }
        let cv = self.values[c.0].values();
        let mut out = vec![0.0; 2 * hidden]; // [h'; c']
        let mut tc = vec![0.0; hidden];
        for k in 0..hidden {
            let c_new = gates[hidden + k] * cv[k] + gates[k] * gates[2 * hidden + k];
            out[hidden + k] = c_new;
            tc[k] = c_new.tanh();
            out[k] = gates[3 * hidden + k] * tc[k];
        }

        self.push(DenseArray::vector(out), move || {
            Box::new(move |vals, gout, g| {
                let gh_new = &gout.values()[..hidden];
                let gc_new = &gout.values()[hidden..];
                let cv = vals[c.0].values();

                // d(pre-activations), gate layout [i | f | g | o]
                let mut gpre = vec![0.0; 4 * hidden];
                let mut gc_prev = vec![0.0; hidden];
                for k in 0..hidden {
                    let i_g = gates[k];
                    let f_g = gates[hidden + k];
                    let g_g = gates[2 * hidden + k];
                    let o_g = gates[3 * hidden + k];
                    let t = tc[k];
                    let go = gh_new[k] * t;
                    let gc_total = gc_new[k] + gh_new[k] * o_g * (1.0 - t * t);
                    let gi = gc_total * g_g;
                    let gf = gc_total * cv[k];
                    let gg = gc_total * i_g;
                    gc_prev[k] = gc_total * f_g;
                    gpre[k] = gi * i_g * (1.0 - i_g);
                    gpre[hidden + k] = gf * f_g * (1.0 - f_g);
                    gpre[2 * hidden + k] = gg * (1.0 - g_g * g_g);
                    gpre[3 * hidden + k] = go * o_g * (1.0 - o_g);
                }

                g.add_to(vals, c, |gc| {
                    for k in 0..hidden {
                        gc[k] += gc_prev[k];
                    }
                });
                g.add_to(vals, bias, |gb| {
                    for j in 0..4 * hidden {
                        gb[j] += gpre[j];
                    }
                });
                g.add_to(vals, x, |gx| {
                    for i in 0..in_dim {
                        let row = vals[wx.0].row(i);
                        let mut s = 0.0;
                        for j in 0..4 * hidden {
                            s += row[j] * gpre[j];
                        }
                        gx[i] += s;
                    }
                });
                g.add_to(vals, h, |gh| {
                    for i in 0..hidden {
                        let row = vals[wh.0].row(i);
                        let mut s = 0.0;
                        for j in 0..4 * hidden {
                            s += row[j] * gpre[j];
                        }
                        gh[i] += s;
                    }
                });
                g.add_to(vals, wx, |gwx| {
                    for i in 0..in_dim {
                        let xi = vals[x.0].values()[i];
                        if xi != 0.0 {
                            let grow = &mut gwx[i * 4 * hidden..(i + 1) * 4 * hidden];
                            for j in 0..4 * hidden {
                                grow[j] += xi * gpre[j];
                            }
                        }
                    }
                });
                g.add_to(vals, wh, |gwh| {
                    for i in 0..hidden {
                        let hi = vals[h.0].values()[i];
                        if hi != 0.0 {
                            let grow = &mut gwh[i * 4 * hidden..(i + 1) * 4 * hidden];
                            for j in 0..4 * hidden {
                                grow[j] += hi * gpre[j];
                            }
                        }
                    }
                });
            })
        })
    }

    /// Additive attention scores: `s_i = v . tanh([query; states_i] x w)`
    /// for every row of `states: [n, d]`. Returns `[n]`.
    pub fn attn_scores(&mut self, query: NodeId, states: NodeId, w: NodeId, v: NodeId) -> NodeId {
        let d_q = self.values[query.0].len();
        let (n, d_s) = (self.values[states.0].rows(), self.values[states.0].cols());
        let a = self.values[w.0].cols();
        assert_eq!(self.values[w.0].rows(), d_q + d_s, "attn_scores: w rows");
        assert_eq!(self.values[v.0].len(), a, "attn_scores: v len");

        // z[i] = tanh([query; states_i] x w), kept for the backward pass
        let mut z = vec![0.0; n * a];
        let mut scores = vec![0.0; n];
        {
            let qv = self.values[query.0].values();
            let wv = &self.values[w.0];
            let sv = &self.values[states.0];
            let vv = self.values[v.0].values();
            let mut q_part = vec![0.0; a];
            for i in 0..d_q {
                let qi = qv[i];
                let row = wv.row(i);
                for j in 0..a {
                    q_part[j] += qi * row[j];
                }
            }
            for i in 0..n {
                let srow = sv.row(i);
                let zrow = &mut z[i * a..(i + 1) * a];
                zrow.copy_from_slice(&q_part);
                for k in 0..d_s {
                    let sk = srow[k];
                    if sk != 0.0 {
                        let wrow = wv.row(d_q + k);
                        for j in 0..a {
                            zrow[j] += sk * wrow[j];
                        }
                    }
                }
                let mut s = 0.0;
                for j in 0..a {
                    zrow[j] = zrow[j].tanh();
                    s += zrow[j] * vv[j];
                }
                scores[i] = s;
            }
        }

        self.push(DenseArray::vector(scores), move || {
            Box::new(move |vals, gout, g| {
                let gs = gout.values();
                let vv = vals[v.0].values().to_vec();
                let d_q_ = vals[query.0].len();
                let (n_, a_) = (vals[states.0].rows(), vals[v.0].len());
                let d_s_ = vals[states.0].cols();

                // per-position pre-activation gradients
                let mut gpre = vec![0.0; n_ * a_];
                for i in 0..n_ {
                    let zrow = &z[i * a_..(i + 1) * a_];
                    let gprow = &mut gpre[i * a_..(i + 1) * a_];
                    for j in 0..a_ {
                        gprow[j] = gs[i] * vv[j] * (1.0 - zrow[j] * zrow[j]);
                    }
                }

                g.add_to(vals, v, |gv| {
                    for i in 0..n_ {
                        let zrow = &z[i * a_..(i + 1) * a_];
                        for j in 0..a_ {
                            gv[j] += gs[i] * zrow[j];
                        }
                    }
                });
                g.add_to(vals, query, |gq| {
                    for i in 0..n_ {
                        let gprow = &gpre[i * a_..(i + 1) * a_];
                        for k in 0..d_q_ {
                            let wrow = vals[w.0].row(k);
                            let mut s = 0.0;
                            for j in 0..a_ {
                                s += wrow[j] * gprow[j];
                            }
                            gq[k] += s;
                        }
                    }
                });
                g.add_to(vals, states, |gst| {
                    for i in 0..n_ {
                        let gprow = &gpre[i * a_..(i + 1) * a_];
                        let grow = &mut gst[i * d_s_..(i + 1) * d_s_];
                        for k in 0..d_s_ {
                            let wrow = vals[w.0].row(d_q_ + k);
                            let mut s = 0.0;
                            for j in 0..a_ {
                                s += wrow[j] * gprow[j];
                            }
                            grow[k] += s;
                        }
                    }
                });
                g.add_to(vals, w, |gw| {
                    let qv = vals[query.0].values();
                    for i in 0..n_ {
                        let gprow = &gpre[i * a_..(i + 1) * a_];
                        for k in 0..d_q_ {
                            let qk = qv[k];
                            if qk != 0.0 {
                                let grow = &mut gw[k * a_..(k + 1) * a_];
                                for j in 0..a_ {
                                    grow[j] += qk * gprow[j];
                                }
                            }
                        }
                        let srow = vals[states.0].row(i);
                        for k in 0..d_s_ {
                            let sk = srow[k];
                            if sk != 0.0 {
                                let grow = &mut gw[(d_q_ + k) * a_..(d_q_ + k + 1) * a_];
                                for j in 0..a_ {
                                    grow[j] += sk * gprow[j];
                                }
                            }
                        }
                    }
                });
            })
        })
    }

    /// Linear copy scores: `q_i = [query; states_i] . w` with
    /// `w: [d_q + d_s]`. Returns `[n]`.
    pub fn copy_scores_linear(&mut self, query: NodeId, states: NodeId, w: NodeId) -> NodeId {
        let d_q = self.values[query.0].len();
        let (n, d_s) = (self.values[states.0].rows(), self.values[states.0].cols());
        assert_eq!(self.values[w.0].len(), d_q + d_s, "copy_scores_linear: w len");
        let wv = self.values[w.0].values();
        let qv = self.values[query.0].values();
        let base: f64 = (0..d_q).map(|i| qv[i] * wv[i]).sum();
        let mut out = vec![0.0; n];
        for i in 0..n {
            let srow = self.values[states.0].row(i);
            let mut s = base;
            for k in 0..d_s {
                s += srow[k] * wv[d_q + k];
            }
            out[i] = s;
        }
        self.push(DenseArray::vector(out), || {
            Box::new(move |vals, gout, g| {
                let gq_sum: f64 = gout.values().iter().sum();
                let d_q_ = vals[query.0].len();
                let (n_, d_s_) = (vals[states.0].rows(), vals[states.0].cols());
                g.add_to(vals, query, |gq| {
                    for i in 0..d_q_ {
                        gq[i] += gq_sum * vals[w.0].values()[i];
                    }
                });
                g.add_to(vals, states, |gst| {
                    for i in 0..n_ {
                        let gi = gout.values()[i];
                        let grow = &mut gst[i * d_s_..(i + 1) * d_s_];
                        for k in 0..d_s_ {
                            grow[k] += gi * vals[w.0].values()[d_q_ + k];
                        }
                    }
                });
                g.add_to(vals, w, |gw| {
                    for i in 0..d_q_ {
                        gw[i] += gq_sum * vals[query.0].values()[i];
                    }
                    for i in 0..n_ {
                        let gi = gout.values()[i];
                        let srow = vals[states.0].row(i);
                        for k in 0..d_s_ {
                            gw[d_q_ + k] += gi * srow[k];
                        }
                    }
                });
            })
        })
    }

    /// Fused copy scores: `q_i = selu([query; states_i] x w_f) . w_o`
    /// with `w_f: [d_q + d_s, f]`, `w_o: [f]`. Returns `[n]`.
    pub fn copy_scores_fused(
        &mut self,
        query: NodeId,
        states: NodeId,
        w_f: NodeId,
        w_o: NodeId,
    ) -> NodeId {
        let d_q = self.values[query.0].len();
        let (n, d_s) = (self.values[states.0].rows(), self.values[states.0].cols());
        let f = self.values[w_f.0].cols();
        assert_eq!(self.values[w_f.0].rows(), d_q + d_s, "copy_scores_fused: w_f rows");
        assert_eq!(self.values[w_o.0].len(), f, "copy_scores_fused: w_o len");

        // pre[i] = [query; states_i] x w_f, kept for the backward pass
        let mut pre = vec![0.0; n * f];
        let mut out = vec![0.0; n];
        {
            let qv = self.values[query.0].values();
            let wfv = &self.values[w_f.0];
            let wov = self.values[w_o.0].values();
            let mut q_part = vec![0.0; f];
            for i in 0..d_q {
                let qi = qv[i];
                let row = wfv.row(i);
                for j in 0..f {
                    q_part[j] += qi * row[j];
                }
            }
            for i in 0..n {
                let srow = self.values[states.0].row(i);
                let prow = &mut pre[i * f..(i + 1) * f];
                prow.copy_from_slice(&q_part);
                for k in 0..d_s {
                    let sk = srow[k];
                    if sk != 0.0 {
                        let wrow = wfv.row(d_q + k);
                        for j in 0..f {
                            prow[j] += sk * wrow[j];
                        }
                    }
                }
                let mut s = 0.0;
                for j in 0..f {
                    s += selu_scalar(prow[j]) * wov[j];
                }
                out[i] = s;
            }
        }

        self.push(DenseArray::vector(out), move || {
            Box::new(move |vals, gout, g| {
                let gs = gout.values();
                let d_q_ = vals[query.0].len();
                let (n_, d_s_) = (vals[states.0].rows(), vals[states.0].cols());
                let f_ = vals[w_o.0].len();
                let wov = vals[w_o.0].values().to_vec();

                let mut gpre = vec![0.0; n_ * f_];
                for i in 0..n_ {
                    let prow = &pre[i * f_..(i + 1) * f_];
                    let gprow = &mut gpre[i * f_..(i + 1) * f_];
                    for j in 0..f_ {
                        gprow[j] = gs[i] * wov[j] * selu_grad_scalar(prow[j]);
                    }
                }

                g.add_to(vals, w_o, |gwo| {
                    for i in 0..n_ {
                        let prow = &pre[i * f_..(i + 1) * f_];
                        for j in 0..f_ {
                            gwo[j] += gs[i] * selu_scalar(prow[j]);
                        }
                    }
                });
                g.add_to(vals, query, |gq| {
                    for i in 0..n_ {
                        let gprow = &gpre[i * f_..(i + 1) * f_];
                        for k in 0..d_q_ {
                            let wrow = vals[w_f.0].row(k);
                            let mut s = 0.0;
                            for j in 0..f_ {
                                s += wrow[j] * gprow[j];
                            }
                            gq[k] += s;
                        }
                    }
                });
                g.add_to(vals, states, |gst| {
                    for i in 0..n_ {
                        let gprow = &gpre[i * f_..(i + 1) * f_];
                        let grow = &mut gst[i * d_s_..(i + 1) * d_s_];
                        for k in 0..d_s_ {
                            let wrow = vals[w_f.0].row(d_q_ + k);
                            let mut s = 0.0;
                            for j in 0..f_ {
                                s += wrow[j] * gprow[j];
                            }
                            grow[k] += s;
                        }
                    }
                });
                g.add_to(vals, w_f, |gwf| {
                    let qv = vals[query.0].values();
                    for i in 0..n_ {
                        let gprow = &gpre[i * f_..(i + 1) * f_];
                        for k in 0..d_q_ {
                            let qk = qv[k];
                            if qk != 0.0 {
                                let grow = &mut gwf[k * f_..(k + 1) * f_];
                                for j in 0..f_ {
                                    grow[j] += qk * gprow[j];
                                }
                            }
                        }
                        let srow = vals[states.0].row(i);
                        for k in 0..d_s_ {
                            let sk = srow[k];
                            if sk != 0.0 {
                                let grow = &mut gwf[(d_q_ + k) * f_..(d_q_ + k + 1) * f_];
                                for j in 0..f_ {
                                    grow[j] += sk * gprow[j];
                                }
                            }
                        }
                    }
                });
            })
        })
    }

    // ── Backward ─────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss node; gradients are ADDED into
    /// the store's existing gradient buffers. A tape can be swept once.
    pub fn backward(&mut self, loss: NodeId, store: &mut ParamStore) -> Result<()> {
        if !self.recording {
            return Err(Error::invalid("backward on an inference tape"));
        }
        if self.backward_done {
            return Err(Error::invalid(
                "backward called twice on one recorded computation",
            ));
        }
        if self.values[loss.0].len() != 1 {
            return Err(Error::invalid("backward: loss must be a scalar"));
        }
        if !self.values[loss.0].is_finite() {
            return Err(Error::Numeric(format!(
                "backward: loss is not finite ({})",
                self.values[loss.0].scalar_value()
            )));
        }
        self.backward_done = true;

        let mut grads = GradSlots {
            slots: (0..self.values.len()).map(|_| None).collect(),
        };
        grads.slots[loss.0] = Some(DenseArray::scalar(1.0));

        for id in (0..=loss.0).rev() {
            let Some(gout) = grads.slots[id].take() else {
                continue;
            };
            if let Some(back) = &self.backs[id] {
                back(&self.values, &gout, &mut grads);
            } else {
                // leaf: keep the gradient for the param flush below
                grads.slots[id] = Some(gout);
            }
        }

        for &(node, pid, row) in &self.param_leaves {
            if let Some(g) = grads.slots[node.0].take() {
                let param = store.get_mut(pid);
                match row {
                    None => param.grad.add_assign(&g),
                    Some(r) => {
                        let grow = param.grad.row_mut(r);
                        for (dst, src) in grow.iter_mut().zip(g.values()) {
                            *dst += src;
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}
