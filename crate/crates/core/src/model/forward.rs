//! One batch worth of differentiable computation: memory update from pending
//! messages, temporal attention embeddings and the edge decoder.

use std::collections::HashMap;

use super::params::{MemoryCell, ModelParams};
use super::state::TemporalState;
use super::tape::{Tape, Var};
use crate::stream::edge_feature;

/// Softmax weights of one attention head, kept for inspection.
#[derive(Debug, Clone, Copy)]
pub struct AttentionRecord {
    pub node: usize,
    pub layer: usize,
    pub head: usize,
    pub weights: Var,
}

pub struct Forward<'a> {
    pub tape: Tape<'a>,
    params: &'a ModelParams,
    state: &'a TemporalState,
    time: f64,
    memory: HashMap<usize, Var>,
    updated: Vec<(usize, Var)>,
    embeddings: HashMap<(usize, usize), Var>,
    encodings: HashMap<u64, Var>,
    pub attention: Vec<AttentionRecord>,
}

impl<'a> Forward<'a> {
    /// Starts a batch at `time`, folding every node's pending messages into
    /// its memory on the tape.
    pub fn new(params: &'a ModelParams, state: &'a TemporalState, time: f64) -> Self {
        let mut fwd = Self {
            tape: Tape::new(&params.store),
            params,
            state,
            time,
            memory: HashMap::new(),
            updated: Vec::new(),
            embeddings: HashMap::new(),
            encodings: HashMap::new(),
            attention: Vec::new(),
        };
        for node in 0..state.n_nodes() {
            if state.has_pending(node) {
                let var = fwd.update_memory(node);
                fwd.memory.insert(node, var);
                fwd.updated.push((node, var));
            }
        }
        fwd
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    /// cos(freq * dt + phase).
    pub fn time_encoding(&mut self, dt: f64) -> Var {
        if let Some(&v) = self.encodings.get(&dt.to_bits()) {
            return v;
        }
        let ids = &self.params.ids;
        let freq = self.tape.param(ids.time_freq);
        let scaled = self.tape.scale(freq, dt);
        let phase = self.tape.param(ids.time_phase);
        let arg = self.tape.add(scaled, phase);
        let v = self.tape.cos(arg);
        self.encodings.insert(dt.to_bits(), v);
        v
    }

    fn update_memory(&mut self, node: usize) -> Var {
        let prev = self.state.memory[node].clone();
        let h = self.tape.constant(prev);
        if self.params.config.memory_cell == MemoryCell::Identity {
            return h;
        }
        let n_nodes = self.params.n_nodes();
        let msgs: Vec<Var> = self.state.pending[node]
            .iter()
            .map(|msg| {
                let feat = self.tape.constant(edge_feature(msg.m, msg.e, n_nodes));
                let enc = self.time_encoding(msg.dt);
                let own = self.tape.constant(msg.own.clone());
                let peer = self.tape.constant(msg.peer.clone());
                self.tape.concat(&[feat, enc, own, peer])
            })
            .collect();
        let x = if msgs.len() == 1 {
            msgs[0]
        } else {
            self.tape.mean(&msgs)
        };
        self.gru(x, h)
    }

    fn gru(&mut self, x: Var, h: Var) -> Var {
        let g = self.params.ids.gru.clone();
        let t = &mut self.tape;
        let ir = t.linear(g.w_ir, g.b_ir, x);
        let hr = t.linear(g.w_hr, g.b_hr, h);
        let r_in = t.add(ir, hr);
        let r = t.sigmoid(r_in);
        let iz = t.linear(g.w_iz, g.b_iz, x);
        let hz = t.linear(g.w_hz, g.b_hz, h);
        let z_in = t.add(iz, hz);
        let z = t.sigmoid(z_in);
        let inn = t.linear(g.w_in, g.b_in, x);
        let hn = t.linear(g.w_hn, g.b_hn, h);
        let gated = t.mul(r, hn);
        let n_in = t.add(inn, gated);
        let n = t.tanh(n_in);
        // h' = n + z (h - n)
        let diff = t.sub(h, n);
        let keep = t.mul(z, diff);
        t.add(n, keep)
    }

    /// Memory of `node` at the start of this batch.
    pub fn memory(&mut self, node: usize) -> Var {
        if let Some(&v) = self.memory.get(&node) {
            return v;
        }
        let v = self.tape.constant(self.state.memory[node].clone());
        self.memory.insert(node, v);
        v
    }

    /// Memory values to commit once the batch is done.
    pub fn updated_memory(&self) -> Vec<(usize, Vec<f64>)> {
        self.updated
            .iter()
            .map(|&(node, var)| (node, self.tape.value(var).to_vec()))
            .collect()
    }

    /// Final-layer embedding of `node`.
    pub fn embed(&mut self, node: usize) -> Var {
        let layers = self.params.config.layers;
        self.embed_layer(node, layers)
    }

    pub fn embed_layer(&mut self, node: usize, layer: usize) -> Var {
        if let Some(&v) = self.embeddings.get(&(node, layer)) {
            return v;
        }
        let v = if layer == 0 {
            let mem = self.memory(node);
            let feat = self.tape.row(self.params.ids.node_features, node);
            self.tape.add(mem, feat)
        } else {
            let own = self.embed_layer(node, layer - 1);
            let attended =
                if self.params.config.use_attention && !self.state.neighbors[node].is_empty() {
                    self.attend(node, layer, own)
                } else {
                    self.tape.constant(vec![0.0; self.params.config.d_emb])
                };
            let ids = self.params.ids.layers[layer - 1].clone();
            let joined = self.tape.concat(&[own, attended]);
            let hidden = self.tape.linear(ids.w_1, ids.b_1, joined);
            let hidden = self.tape.relu(hidden);
            self.tape.linear(ids.w_2, ids.b_2, hidden)
        };
        self.embeddings.insert((node, layer), v);
        v
    }

    fn attend(&mut self, node: usize, layer: usize, own: Var) -> Var {
        let ids = self.params.ids.layers[layer - 1].clone();
        let cfg = &self.params.config;
        let (heads, head_dim) = (cfg.heads, cfg.d_emb / cfg.heads);
        let n_nodes = self.params.n_nodes();

        let zero = self.time_encoding(0.0);
        let q_in = self.tape.concat(&[own, zero]);
        let query = self.tape.linear(ids.w_q, ids.b_q, q_in);

        let ring: Vec<_> = self.state.neighbors[node].iter().copied().collect();
        let mut keys = Vec::with_capacity(ring.len());
        let mut values = Vec::with_capacity(ring.len());
        for nb in &ring {
            let h = self.embed_layer(nb.neighbor, layer - 1);
            let feat = self.tape.constant(edge_feature(nb.m, nb.e, n_nodes));
            let enc = self.time_encoding(self.time - nb.time);
            let kv = self.tape.concat(&[h, feat, enc]);
            keys.push(self.tape.linear(ids.w_k, ids.b_k, kv));
            values.push(self.tape.linear(ids.w_v, ids.b_v, kv));
        }

        let scale = 1.0 / (head_dim as f64).sqrt();
        let mut outputs = Vec::with_capacity(heads);
        for head in 0..heads {
            let start = head * head_dim;
            let q = self.tape.slice(query, start, head_dim);
            let scores: Vec<Var> = keys
                .iter()
                .map(|&k| {
                    let kh = self.tape.slice(k, start, head_dim);
                    self.tape.dot(q, kh)
                })
                .collect();
            let logits = self.tape.concat(&scores);
            let logits = self.tape.scale(logits, scale);
            let weights = self.tape.softmax(logits);
            self.attention.push(AttentionRecord {
                node,
                layer,
                head,
                weights,
            });
            let vs: Vec<Var> = values
                .iter()
                .map(|&v| self.tape.slice(v, start, head_dim))
                .collect();
            outputs.push(self.tape.weighted_sum(weights, &vs));
        }
        let joined = self.tape.concat(&outputs);
        self.tape.linear(ids.w_o, ids.b_o, joined)
    }

    /// Edge logit for a (series, event) embedding pair.
    pub fn logit(&mut self, a: Var, b: Var) -> Var {
        let ids = &self.params.ids;
        let (w1, b1, w2, b2) = (ids.dec_w1, ids.dec_b1, ids.dec_w2, ids.dec_b2);
        let joined = self.tape.concat(&[a, b]);
        let hidden = self.tape.linear(w1, b1, joined);
        let hidden = self.tape.relu(hidden);
        self.tape.linear(w2, b2, hidden)
    }

    /// Logit for the edge between two node ids.
    pub fn edge_logit(&mut self, a: usize, b: usize) -> Var {
        let za = self.embed(a);
        let zb = self.embed(b);
        self.logit(za, zb)
    }
}
