use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::tape::{Gradients, ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MemoryCell {
    #[default]
    Gru,
    /// Leaves memory untouched; test harness only.
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_mem: usize,
    pub d_emb: usize,
    pub d_time: usize,
    pub heads: usize,
    pub layers: usize,
    pub neighbors: usize,
    #[serde(default = "yes")]
    pub use_attention: bool,
    #[serde(default)]
    pub memory_cell: MemoryCell,
}

fn yes() -> bool {
    true
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_mem: 64,
            d_emb: 64,
            d_time: 64,
            heads: 2,
            layers: 1,
            neighbors: 10,
            use_attention: true,
            memory_cell: MemoryCell::Gru,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParam(m.to_string()));
        if self.d_mem == 0
            || self.d_time == 0
            || self.heads == 0
            || self.layers == 0
            || self.neighbors == 0
        {
            return bad("model dimensions, heads, layers and neighbors must be positive");
        }
        if self.d_mem != self.d_emb {
            return bad("d_emb must equal d_mem (embeddings start from memory + node features)");
        }
        if !self.d_emb.is_multiple_of(self.heads) {
            return bad("d_emb must be divisible by the head count");
        }
        Ok(())
    }

    /// Message length: edge feature, time encoding, own and peer memory.
    pub fn message_dim(&self, n_nodes: usize) -> usize {
        n_nodes + self.d_time + 2 * self.d_mem
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruIds {
    pub w_ir: ParamId,
    pub w_iz: ParamId,
    pub w_in: ParamId,
    pub w_hr: ParamId,
    pub w_hz: ParamId,
    pub w_hn: ParamId,
    pub b_ir: ParamId,
    pub b_iz: ParamId,
    pub b_in: ParamId,
    pub b_hr: ParamId,
    pub b_hz: ParamId,
    pub b_hn: ParamId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerIds {
    pub w_q: ParamId,
    pub b_q: ParamId,
    pub w_k: ParamId,
    pub b_k: ParamId,
    pub w_v: ParamId,
    pub b_v: ParamId,
    pub w_o: ParamId,
    pub b_o: ParamId,
    pub w_1: ParamId,
    pub b_1: ParamId,
    pub w_2: ParamId,
    pub b_2: ParamId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamIds {
    pub time_freq: ParamId,
    pub time_phase: ParamId,
    pub node_features: ParamId,
    pub gru: GruIds,
    pub layers: Vec<LayerIds>,
    pub dec_w1: ParamId,
    pub dec_b1: ParamId,
    pub dec_w2: ParamId,
    pub dec_b2: ParamId,
}

/// All trainable tensors plus the id layout that names them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub n_series: usize,
    pub n_events: usize,
    pub store: ParamStore,
    pub ids: ParamIds,
}

struct Init<'a> {
    store: &'a mut ParamStore,
    rng: &'a mut ChaCha8Rng,
}

impl Init<'_> {
    fn glorot(&mut self, name: &str, rows: usize, cols: usize) -> ParamId {
        let a = (6.0 / (rows + cols) as f64).sqrt();
        let mut t = Tensor::zeros(name, rows, cols);
        t.data
            .iter_mut()
            .for_each(|v| *v = self.rng.random_range(-a..a));
        self.store.add(t)
    }

    fn zeros(&mut self, name: &str, len: usize) -> ParamId {
        self.store.add(Tensor::zeros(name, len, 1))
    }
}

impl ModelParams {
    pub fn new(config: ModelConfig, n_series: usize, n_events: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let n_nodes = n_series + n_events + 2;
        let (dm, de, dt) = (config.d_mem, config.d_emb, config.d_time);
        let msg = config.message_dim(n_nodes);
        let kv = de + n_nodes + dt;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::default();

        // Log-spaced frequencies 10^{-9k/(d-1)}, zero phase.
        let mut freq = Tensor::zeros("time.freq", dt, 1);
        for (k, f) in freq.data.iter_mut().enumerate() {
            let e = if dt > 1 {
                9.0 * k as f64 / (dt - 1) as f64
            } else {
                0.0
            };
            *f = 10f64.powf(-e);
        }
        let time_freq = store.add(freq);
        let time_phase = store.add(Tensor::zeros("time.phase", dt, 1));

        let normal = Normal::new(0.0, 0.1).expect("valid normal");
        let mut feats = Tensor::zeros("node.features", n_nodes, de);
        feats
            .data
            .iter_mut()
            .for_each(|v| *v = normal.sample(&mut rng));
        let node_features = store.add(feats);

        let mut init = Init {
            store: &mut store,
            rng: &mut rng,
        };
        let gru = GruIds {
            w_ir: init.glorot("gru.w_ir", dm, msg),
            w_iz: init.glorot("gru.w_iz", dm, msg),
            w_in: init.glorot("gru.w_in", dm, msg),
            w_hr: init.glorot("gru.w_hr", dm, dm),
            w_hz: init.glorot("gru.w_hz", dm, dm),
            w_hn: init.glorot("gru.w_hn", dm, dm),
            b_ir: init.zeros("gru.b_ir", dm),
            b_iz: init.zeros("gru.b_iz", dm),
            b_in: init.zeros("gru.b_in", dm),
            b_hr: init.zeros("gru.b_hr", dm),
            b_hz: init.zeros("gru.b_hz", dm),
            b_hn: init.zeros("gru.b_hn", dm),
        };
        let layers = (0..config.layers)
            .map(|l| LayerIds {
                w_q: init.glorot(&format!("attn{l}.w_q"), de, de + dt),
                b_q: init.zeros(&format!("attn{l}.b_q"), de),
                w_k: init.glorot(&format!("attn{l}.w_k"), de, kv),
                b_k: init.zeros(&format!("attn{l}.b_k"), de),
                w_v: init.glorot(&format!("attn{l}.w_v"), de, kv),
                b_v: init.zeros(&format!("attn{l}.b_v"), de),
                w_o: init.glorot(&format!("attn{l}.w_o"), de, de),
                b_o: init.zeros(&format!("attn{l}.b_o"), de),
                w_1: init.glorot(&format!("combine{l}.w_1"), de, 2 * de),
                b_1: init.zeros(&format!("combine{l}.b_1"), de),
                w_2: init.glorot(&format!("combine{l}.w_2"), de, de),
                b_2: init.zeros(&format!("combine{l}.b_2"), de),
            })
            .collect();
        let dec_w1 = init.glorot("decoder.w_1", de, 2 * de);
        let dec_b1 = init.zeros("decoder.b_1", de);
        let dec_w2 = init.glorot("decoder.w_2", 1, de);
        let dec_b2 = init.zeros("decoder.b_2", 1);

        Ok(Self {
            config,
            n_series,
            n_events,
            store,
            ids: ParamIds {
                time_freq,
                time_phase,
                node_features,
                gru,
                layers,
                dec_w1,
                dec_b1,
                dec_w2,
                dec_b2,
            },
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_series + self.n_events + 2
    }

    pub fn residual_plus(&self) -> usize {
        self.n_series + self.n_events
    }

    pub fn residual_minus(&self) -> usize {
        self.n_series + self.n_events + 1
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, store: &ParamStore) -> Self {
        let zeros = || {
            store
                .tensors
                .iter()
                .map(|t| vec![0.0; t.data.len()])
                .collect()
        };
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, t) in store.tensors.iter_mut().enumerate() {
            let (m, v, g) = (&mut self.m[i], &mut self.v[i], &grads.values[i]);
            for k in 0..t.data.len() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g[k];
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g[k] * g[k];
                t.data[k] -= self.lr * (m[k] / c1) / ((v[k] / c2).sqrt() + self.eps);
            }
        }
    }
}
