//! Vector-valued reverse-mode tape.
//!
//! Every node holds a dense `f64` vector. Parameters are read in place from a
//! [`ParamStore`]; matrix parameters only ever enter through [`Tape::matvec`]
//! or [`Tape::row`], so they are never copied onto the tape.

use serde::{Deserialize, Serialize};

pub type Var = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(name: &str, rows: usize, cols: usize) -> Self {
        Self {
            name: name.to_string(),
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    pub tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn add(&mut self, t: Tensor) -> ParamId {
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn zeros_like(&self) -> Gradients {
        Gradients {
            values: self
                .tensors
                .iter()
                .map(|t| vec![0.0; t.data.len()])
                .collect(),
        }
    }

    pub fn n_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors
            .iter()
            .all(|t| t.data.iter().all(|v| v.is_finite()))
    }
}

/// Gradient buffers shaped like a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub values: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    Row(ParamId, usize),
    MatVec(ParamId, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Cos(Var),
    Dot(Var, Var),
    Softmax(Var),
    WeightedSum(Var, Vec<Var>),
    Mean(Vec<Var>),
    Sum(Vec<Var>),
    BceLogits(Var, f64),
}

#[derive(Debug, Clone)]
struct Node {
    value: Vec<f64>,
    op: Op,
}

pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::with_capacity(1024),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v].value[0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn constant(&mut self, v: Vec<f64>) -> Var {
        self.push(v, Op::Leaf)
    }

    pub fn param(&mut self, p: ParamId) -> Var {
        let v = self.params.get(p).data.clone();
        self.push(v, Op::Param(p))
    }

    pub fn row(&mut self, p: ParamId, r: usize) -> Var {
        let v = self.params.get(p).row(r).to_vec();
        self.push(v, Op::Row(p, r))
    }

    pub fn matvec(&mut self, p: ParamId, x: Var) -> Var {
        let w = self.params.get(p);
        let xv = &self.nodes[x].value;
        assert_eq!(w.cols, xv.len(), "matvec shape mismatch for {}", w.name);
        let y = (0..w.rows)
            .map(|i| w.row(i).iter().zip(xv).map(|(a, b)| a * b).sum())
            .collect();
        self.push(y, Op::MatVec(p, x))
    }

    /// `W x + b`.
    pub fn linear(&mut self, w: ParamId, b: ParamId, x: Var) -> Var {
        let wx = self.matvec(w, x);
        let bv = self.param(b);
        self.add(wx, bv)
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let (x, y) = (&self.nodes[a].value, &self.nodes[b].value);
        assert_eq!(x.len(), y.len(), "elementwise shape mismatch");
        x.iter().zip(y).map(|(p, q)| f(*p, *q)).collect()
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Vec<f64> {
        self.nodes[a].value.iter().map(|x| f(*x)).collect()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip(a, b, |x, y| x + y);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip(a, b, |x, y| x - y);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip(a, b, |x, y| x * y);
        self.push(v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.map(a, |x| x * c);
        self.push(v, Op::Scale(a, c))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let v = parts
            .iter()
            .flat_map(|&p| self.nodes[p].value.iter().copied())
            .collect();
        self.push(v, Op::Concat(parts.to_vec()))
    }

    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.nodes[a].value[start..start + len].to_vec();
        self.push(v, Op::Slice(a, start))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.map(a, sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.map(a, f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.map(a, |x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn cos(&mut self, a: Var) -> Var {
        let v = self.map(a, f64::cos);
        self.push(v, Op::Cos(a))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let s = self.zip(a, b, |x, y| x * y).iter().sum();
        self.push(vec![s], Op::Dot(a, b))
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let x = &self.nodes[a].value;
        let mx = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let ex: Vec<f64> = x.iter().map(|v| (v - mx).exp()).collect();
        let z: f64 = ex.iter().sum();
        let v = ex.into_iter().map(|e| e / z).collect();
        self.push(v, Op::Softmax(a))
    }

    /// Σ_i w_i x_i for a weight vector `w` and same-length item vectors.
    pub fn weighted_sum(&mut self, w: Var, items: &[Var]) -> Var {
        let ws = &self.nodes[w].value;
        assert_eq!(ws.len(), items.len());
        let dim = self.nodes[items[0]].value.len();
        let mut v = vec![0.0; dim];
        for (wi, &it) in ws.iter().zip(items) {
            v.iter_mut()
                .zip(&self.nodes[it].value)
                .for_each(|(o, x)| *o += wi * x);
        }
        self.push(v, Op::WeightedSum(w, items.to_vec()))
    }

    pub fn mean(&mut self, items: &[Var]) -> Var {
        let v = self
            .sum_values(items)
            .into_iter()
            .map(|x| x / items.len() as f64)
            .collect();
        self.push(v, Op::Mean(items.to_vec()))
    }

    pub fn sum(&mut self, items: &[Var]) -> Var {
        let v = self.sum_values(items);
        self.push(v, Op::Sum(items.to_vec()))
    }

    fn sum_values(&self, items: &[Var]) -> Vec<f64> {
        let dim = self.nodes[items[0]].value.len();
        let mut v = vec![0.0; dim];
        for &it in items {
            v.iter_mut()
                .zip(&self.nodes[it].value)
                .for_each(|(o, x)| *o += x);
        }
        v
    }

    /// Binary cross-entropy of a scalar logit against `target` ∈ {0, 1}.
    pub fn bce_logits(&mut self, logit: Var, target: f64) -> Var {
        let z = self.nodes[logit].value[0];
        // log(1 + e^z) - t z, computed stably.
        let loss = z.max(0.0) - target * z + (-z.abs()).exp().ln_1p();
        self.push(vec![loss], Op::BceLogits(logit, target))
    }

    /// Accumulates d(root)/d(param) into `grads`. `root` must be a scalar.
    pub fn backward(&self, root: Var, grads: &mut Gradients) {
        let mut adj: Vec<Vec<f64>> = vec![Vec::new(); self.nodes.len()];
        adj[root] = vec![1.0];
        fn acc(slot: &mut Vec<f64>, g: &[f64]) {
            if slot.is_empty() {
                slot.extend_from_slice(g);
            } else {
                slot.iter_mut().zip(g).for_each(|(a, b)| *a += b);
            }
        }
        for i in (0..=root).rev() {
            if adj[i].is_empty() {
                continue;
            }
            let g = std::mem::take(&mut adj[i]);
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Param(p) => grads.values[p.0]
                    .iter_mut()
                    .zip(&g)
                    .for_each(|(a, b)| *a += b),
                Op::Row(p, r) => {
                    let cols = self.params.get(*p).cols;
                    grads.values[p.0][r * cols..(r + 1) * cols]
                        .iter_mut()
                        .zip(&g)
                        .for_each(|(a, b)| *a += b);
                }
                Op::MatVec(p, x) => {
                    let w = self.params.get(*p);
                    let xv = &self.nodes[*x].value;
                    let gw = &mut grads.values[p.0];
                    let mut gx = vec![0.0; w.cols];
                    for (r, gr) in g.iter().enumerate() {
                        if *gr == 0.0 {
                            continue;
                        }
                        let row = w.row(r);
                        let grow = &mut gw[r * w.cols..(r + 1) * w.cols];
                        for c in 0..w.cols {
                            grow[c] += gr * xv[c];
                            gx[c] += gr * row[c];
                        }
                    }
                    acc(&mut adj[*x], &gx);
                }
                Op::Add(a, b) => {
                    acc(&mut adj[*a], &g);
                    acc(&mut adj[*b], &g);
                }
                Op::Sub(a, b) => {
                    acc(&mut adj[*a], &g);
                    let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                    acc(&mut adj[*b], &neg);
                }
                Op::Mul(a, b) => {
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(&self.nodes[*b].value)
                        .map(|(x, y)| x * y)
                        .collect();
                    let gb: Vec<f64> = g
                        .iter()
                        .zip(&self.nodes[*a].value)
                        .map(|(x, y)| x * y)
                        .collect();
                    acc(&mut adj[*a], &ga);
                    acc(&mut adj[*b], &gb);
                }
                Op::Scale(a, c) => {
                    let ga: Vec<f64> = g.iter().map(|x| x * c).collect();
                    acc(&mut adj[*a], &ga);
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let n = self.nodes[p].value.len();
                        acc(&mut adj[p], &g[off..off + n]);
                        off += n;
                    }
                }
                Op::Slice(a, start) => {
                    let n = self.nodes[*a].value.len();
                    let mut ga = vec![0.0; n];
                    ga[*start..*start + g.len()].copy_from_slice(&g);
                    acc(&mut adj[*a], &ga);
                }
                Op::Sigmoid(a) => {
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(&node.value)
                        .map(|(x, s)| x * s * (1.0 - s))
                        .collect();
                    acc(&mut adj[*a], &ga);
                }
                Op::Tanh(a) => {
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(&node.value)
                        .map(|(x, t)| x * (1.0 - t * t))
                        .collect();
                    acc(&mut adj[*a], &ga);
                }
                Op::Relu(a) => {
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(&self.nodes[*a].value)
                        .map(|(x, v)| if *v > 0.0 { *x } else { 0.0 })
                        .collect();
                    acc(&mut adj[*a], &ga);
                }
                Op::Cos(a) => {
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(&self.nodes[*a].value)
                        .map(|(x, v)| -x * v.sin())
                        .collect();
                    acc(&mut adj[*a], &ga);
                }
                Op::Dot(a, b) => {
                    let s = g[0];
                    let ga: Vec<f64> = self.nodes[*b].value.iter().map(|y| s * y).collect();
                    let gb: Vec<f64> = self.nodes[*a].value.iter().map(|x| s * x).collect();
                    acc(&mut adj[*a], &ga);
                    acc(&mut adj[*b], &gb);
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let inner: f64 = g.iter().zip(y).map(|(gi, yi)| gi * yi).sum();
                    let ga: Vec<f64> = g.iter().zip(y).map(|(gi, yi)| yi * (gi - inner)).collect();
                    acc(&mut adj[*a], &ga);
                }
                Op::WeightedSum(w, items) => {
                    let ws = &self.nodes[*w].value;
                    let gw: Vec<f64> = items
                        .iter()
                        .map(|&it| {
                            self.nodes[it]
                                .value
                                .iter()
                                .zip(&g)
                                .map(|(x, y)| x * y)
                                .sum()
                        })
                        .collect();
                    for (wi, &it) in ws.iter().zip(items) {
                        let gi: Vec<f64> = g.iter().map(|x| x * wi).collect();
                        acc(&mut adj[it], &gi);
                    }
                    acc(&mut adj[*w], &gw);
                }
                Op::Mean(items) => {
                    let gi: Vec<f64> = g.iter().map(|x| x / items.len() as f64).collect();
                    for &it in items {
                        acc(&mut adj[it], &gi);
                    }
                }
                Op::Sum(items) => {
                    for &it in items {
                        acc(&mut adj[it], &g);
                    }
                }
                Op::BceLogits(z, t) => {
                    let p = sigmoid(self.nodes[*z].value[0]);
                    acc(&mut adj[*z], &[g[0] * (p - t)]);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> (ParamStore, ParamId, ParamId) {
        let mut ps = ParamStore::default();
        let w = ps.add(Tensor {
            name: "w".into(),
            rows: 2,
            cols: 3,
            data: vec![0.3, -0.2, 0.5, 0.1, 0.4, -0.6],
        });
        let b = ps.add(Tensor {
            name: "b".into(),
            rows: 2,
            cols: 1,
            data: vec![0.05, -0.1],
        });
        (ps, w, b)
    }

    fn loss(ps: &ParamStore, w: ParamId, b: ParamId) -> (f64, Gradients) {
        let mut tape = Tape::new(ps);
        let x = tape.constant(vec![1.0, -2.0, 0.5]);
        let h = tape.linear(w, b, x);
        let t = tape.tanh(h);
        let s = tape.sigmoid(h);
        let m = tape.mul(t, s);
        let c = tape.cos(m);
        let sm = tape.softmax(c);
        let ws = tape.weighted_sum(sm, &[t, s]);
        let d = tape.dot(ws, h);
        let l = tape.bce_logits(d, 1.0);
        let mut g = ps.zeros_like();
        tape.backward(l, &mut g);
        (tape.scalar(l), g)
    }

    #[test]
    fn finite_differences_agree() {
        let (ps, w, b) = store();
        let (_, g) = loss(&ps, w, b);
        let h = 1e-6;
        for (pi, t) in ps.tensors.iter().enumerate() {
            for k in 0..t.data.len() {
                let mut plus = ps.clone();
                plus.tensors[pi].data[k] += h;
                let mut minus = ps.clone();
                minus.tensors[pi].data[k] -= h;
                let fd = (loss(&plus, w, b).0 - loss(&minus, w, b).0) / (2.0 * h);
                assert!(
                    (fd - g.values[pi][k]).abs() < 1e-8,
                    "{} {k}: {fd} vs {}",
                    t.name,
                    g.values[pi][k]
                );
            }
        }
    }

    #[test]
    fn bce_at_zero_logit_is_ln2() {
        let ps = ParamStore::default();
        let mut tape = Tape::new(&ps);
        let z = tape.constant(vec![0.0]);
        let l = tape.bce_logits(z, 1.0);
        assert!((tape.scalar(l) - 2f64.ln()).abs() < 1e-15);
    }
}
