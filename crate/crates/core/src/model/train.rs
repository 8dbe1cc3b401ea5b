use log::debug;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::forward::Forward;
use super::params::{Adam, ModelParams};
use super::state::TemporalState;
use super::tape::{Gradients, Var};
use crate::error::{Error, Result};
use crate::stream::{AttributedEdge, BipartiteEdgeStream, EdgeKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            lr: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub first_batch_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub params: ModelParams,
    /// Memory after the final epoch, ready to continue into later windows.
    pub state: TemporalState,
    pub history: Vec<EpochStats>,
}

/// (series node, event node) pairs.
pub type EdgePairs = Vec<(usize, usize)>;

pub fn fresh_state(params: &ModelParams) -> TemporalState {
    TemporalState::new(
        params.n_nodes(),
        params.config.d_mem,
        params.config.neighbors,
    )
}

pub fn positives(edges: &[AttributedEdge]) -> EdgePairs {
    edges.iter().map(|e| (e.m, e.e)).collect()
}

/// One negative per positive: a different pattern event for matched edges,
/// the opposite residual node for residual edges.
pub fn sample_negatives(
    edges: &[AttributedEdge],
    params: &ModelParams,
    rng: &mut impl Rng,
) -> EdgePairs {
    let first = params.n_series;
    let k = params.n_events;
    edges
        .iter()
        .filter_map(|edge| match edge.kind {
            EdgeKind::Matched if k > 1 => {
                let mut pick = first + rng.random_range(0..k - 1);
                if pick >= edge.e {
                    pick += 1;
                }
                Some((edge.m, pick))
            }
            EdgeKind::Matched => None,
            EdgeKind::Residual => {
                let other = if edge.e == params.residual_plus() {
                    params.residual_minus()
                } else {
                    params.residual_plus()
                };
                Some((edge.m, other))
            }
        })
        .collect()
}

/// Mean binary cross-entropy over positive and negative pairs.
pub fn batch_loss(fwd: &mut Forward, pos: &[(usize, usize)], neg: &[(usize, usize)]) -> Var {
    let mut terms = Vec::with_capacity(pos.len() + neg.len());
    for (pairs, target) in [(pos, 1.0), (neg, 0.0)] {
        for &(a, b) in pairs {
            let z = fwd.edge_logit(a, b);
            terms.push(fwd.tape.bce_logits(z, target));
        }
    }
    fwd.tape.mean(&terms)
}

/// Everything a single batch needs, frozen so its loss is a pure function of
/// the parameters.
#[derive(Debug, Clone)]
pub struct BatchContext {
    pub state: TemporalState,
    pub time: f64,
    pub positives: EdgePairs,
    pub negatives: EdgePairs,
}

impl BatchContext {
    pub fn loss(&self, params: &ModelParams) -> f64 {
        let mut fwd = Forward::new(params, &self.state, self.time);
        let l = batch_loss(&mut fwd, &self.positives, &self.negatives);
        fwd.tape.scalar(l)
    }

    pub fn loss_and_grad(&self, params: &ModelParams) -> (f64, Gradients) {
        let mut fwd = Forward::new(params, &self.state, self.time);
        let l = batch_loss(&mut fwd, &self.positives, &self.negatives);
        let mut grads = params.store.zeros_like();
        fwd.tape.backward(l, &mut grads);
        (fwd.tape.scalar(l), grads)
    }
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(
        seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(epoch as u64),
    )
}

/// Runs one pass over the stream without optimizing, recording the context of
/// every batch.
pub fn collect_contexts(
    stream: &BipartiteEdgeStream,
    params: &ModelParams,
    seed: u64,
) -> Result<Vec<BatchContext>> {
    let mut rng = epoch_rng(seed, 0);
    let mut state = fresh_state(params);
    let mut out = Vec::with_capacity(stream.n_windows);
    for t in 0..stream.n_windows {
        let edges = stream.window(t);
        let ctx = BatchContext {
            state: state.clone(),
            time: t as f64,
            positives: positives(edges),
            negatives: sample_negatives(edges, params, &mut rng),
        };
        let updates = Forward::new(params, &state, t as f64).updated_memory();
        state.commit(updates)?;
        state.observe(edges, t as f64);
        out.push(ctx);
    }
    Ok(out)
}

/// Self-supervised edge-prediction training. Each window is one batch:
/// pending messages update memory, the window's edges are scored against
/// that memory, and only then are the window's own messages queued.
pub fn train(
    stream: &BipartiteEdgeStream,
    mut params: ModelParams,
    cfg: &TrainConfig,
) -> Result<TrainedModel> {
    if stream.n_series != params.n_series || stream.n_events != params.n_events {
        return Err(Error::Shape(format!(
            "stream has {} series / {} events, model expects {} / {}",
            stream.n_series, stream.n_events, params.n_series, params.n_events
        )));
    }
    if cfg.epochs == 0 || !(cfg.lr > 0.0) {
        return Err(Error::InvalidParam("epochs and lr must be positive".into()));
    }
    let mut adam = Adam::new(cfg.lr, &params.store);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut state = fresh_state(&params);
    for epoch in 0..cfg.epochs {
        let mut rng = epoch_rng(cfg.seed, epoch);
        state = fresh_state(&params);
        let (mut total, mut first) = (0.0, f64::NAN);
        for t in 0..stream.n_windows {
            let edges = stream.window(t);
            let neg = sample_negatives(edges, &params, &mut rng);
            let time = t as f64;
            let (loss, grads, updates) = {
                let mut fwd = Forward::new(&params, &state, time);
                let l = batch_loss(&mut fwd, &positives(edges), &neg);
                let mut grads = params.store.zeros_like();
                fwd.tape.backward(l, &mut grads);
                (fwd.tape.scalar(l), grads, fwd.updated_memory())
            };
            if !loss.is_finite() || grads.values.iter().flatten().any(|g| !g.is_finite()) {
                return Err(Error::Diverged(format!(
                    "non-finite loss {loss} at epoch {epoch}, window {t}"
                )));
            }
            if t == 0 {
                first = loss;
            }
            total += loss;
            adam.step(&mut params.store, &grads);
            if !params.store.all_finite() {
                return Err(Error::Diverged(format!(
                    "non-finite parameters at epoch {epoch}, window {t}"
                )));
            }
            state.commit(updates)?;
            state.observe(edges, time);
        }
        let stats = EpochStats {
            epoch,
            mean_loss: total / stream.n_windows.max(1) as f64,
            first_batch_loss: first,
        };
        debug!("epoch {epoch}: mean loss {:.6}", stats.mean_loss);
        history.push(stats);
    }
    Ok(TrainedModel {
        params,
        state,
        history,
    })
}

/// Forecast of one series' next edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesForecast {
    pub series: usize,
    /// Node id of the most likely pattern event.
    pub pattern_event: usize,
    /// Node id of the more likely residual node.
    pub residual_event: usize,
    /// Softmax of decoder logits over all event nodes, in node-id order.
    pub distribution: Vec<f64>,
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn softmax(xs: &[f64]) -> Vec<f64> {
    let mx = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ex: Vec<f64> = xs.iter().map(|x| (x - mx).exp()).collect();
    let z: f64 = ex.iter().sum();
    ex.into_iter().map(|e| e / z).collect()
}

fn forecast_all(fwd: &mut Forward, params: &ModelParams) -> Vec<SeriesForecast> {
    let first = params.n_series;
    let k = params.n_events;
    (0..params.n_series)
        .map(|m| {
            let logits: Vec<f64> = (first..params.n_nodes())
                .map(|e| {
                    let z = fwd.edge_logit(m, e);
                    fwd.tape.scalar(z)
                })
                .collect();
            SeriesForecast {
                series: m,
                pattern_event: first + argmax(&logits[..k]),
                residual_event: first + k + argmax(&logits[k..]),
                distribution: softmax(&logits),
            }
        })
        .collect()
}

/// Forecasts for the window at `time` given memory through the previous window.
pub fn predict_next_events(
    params: &ModelParams,
    state: &TemporalState,
    time: f64,
) -> Vec<SeriesForecast> {
    let mut fwd = Forward::new(params, state, time);
    forecast_all(&mut fwd, params)
}

/// Streams `stream` through the model: each window is forecast before its
/// edges are observed. Window `t` runs at time `time_offset + t`.
pub fn replay(
    params: &ModelParams,
    state: &mut TemporalState,
    stream: &BipartiteEdgeStream,
    time_offset: f64,
) -> Result<Vec<Vec<SeriesForecast>>> {
    let mut out = Vec::with_capacity(stream.n_windows);
    for t in 0..stream.n_windows {
        let time = time_offset + t as f64;
        let (forecasts, updates) = {
            let mut fwd = Forward::new(params, state, time);
            (forecast_all(&mut fwd, params), fwd.updated_memory())
        };
        state.commit(updates)?;
        state.observe(stream.window(t), time);
        out.push(forecasts);
    }
    Ok(out)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::model::params::ModelConfig;
    use crate::stream::assemble_stream;

    pub(crate) fn tiny_config() -> ModelConfig {
        ModelConfig {
            d_mem: 8,
            d_emb: 8,
            d_time: 4,
            heads: 2,
            layers: 1,
            neighbors: 10,
            ..ModelConfig::default()
        }
    }

    /// `matched[t][m]` is a pattern index; residual edges are all negative.
    pub(crate) fn stream_from(
        n_series: usize,
        n_events: usize,
        matched: &[Vec<usize>],
    ) -> BipartiteEdgeStream {
        let rm = n_series + n_events + 1;
        let mut mat = Vec::new();
        let mut res = Vec::new();
        for (t, row) in matched.iter().enumerate() {
            for (m, &k) in row.iter().enumerate() {
                mat.push(AttributedEdge {
                    t,
                    m,
                    e: n_series + k,
                    kind: EdgeKind::Matched,
                });
                res.push(AttributedEdge {
                    t,
                    m,
                    e: rm,
                    kind: EdgeKind::Residual,
                });
            }
        }
        assemble_stream(n_series, n_events, mat, res).unwrap()
    }

    fn alternating(n: usize) -> BipartiteEdgeStream {
        stream_from(1, 2, &(0..n).map(|t| vec![t % 2]).collect::<Vec<_>>())
    }

    #[test]
    fn negatives_differ_from_positives() {
        let s = stream_from(2, 3, &[vec![0, 2], vec![1, 1]]);
        let p = ModelParams::new(tiny_config(), 2, 3, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for t in 0..2 {
            let neg = sample_negatives(s.window(t), &p, &mut rng);
            assert_eq!(neg.len(), 4);
            for (edge, &(m, e)) in s.window(t).iter().zip(&neg) {
                assert_eq!(edge.m, m);
                assert_ne!(edge.e, e);
                assert_eq!(
                    p.n_series + p.n_events <= e,
                    edge.kind == EdgeKind::Residual
                );
            }
        }
    }

    #[test]
    fn first_batch_loss_near_chance() {
        let s = alternating(4);
        let p = ModelParams::new(tiny_config(), 1, 2, 7).unwrap();
        let ctx = collect_contexts(&s, &p, 0).unwrap();
        let l = ctx[0].loss(&p);
        assert!((l - 2f64.ln()).abs() < 0.15, "{l}");
    }

    #[test]
    fn contexts_exclude_current_batch_messages() {
        let s = alternating(6);
        let p = ModelParams::new(tiny_config(), 1, 2, 7).unwrap();
        let ctx = collect_contexts(&s, &p, 0).unwrap();
        for (t, c) in ctx.iter().enumerate() {
            for msg in c.state.pending.iter().flatten() {
                assert_eq!(msg.time, t as f64 - 1.0);
            }
            assert!(c
                .state
                .neighbors
                .iter()
                .flatten()
                .all(|i| i.time < t as f64));
        }
    }

    #[test]
    fn replay_is_deterministic() {
        let s = alternating(12);
        let p = ModelParams::new(tiny_config(), 1, 2, 5).unwrap();
        let run = || {
            let mut st = fresh_state(&p);
            let f = replay(&p, &mut st, &s, 0.0).unwrap();
            (f, st)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let s = alternating(5);
        let p = ModelParams::new(tiny_config(), 1, 2, 11).unwrap();
        let ctx = collect_contexts(&s, &p, 2).unwrap();
        let total = |p: &ModelParams| ctx.iter().map(|c| c.loss(p)).sum::<f64>();
        let mut grads = p.store.zeros_like();
        for c in &ctx {
            grads.add_assign(&c.loss_and_grad(&p).1);
        }
        let h = 1e-6;
        for (ti, t) in p.store.tensors.iter().enumerate() {
            for k in (0..t.data.len()).step_by(7) {
                let mut a = p.clone();
                a.store.tensors[ti].data[k] += h;
                let mut b = p.clone();
                b.store.tensors[ti].data[k] -= h;
                let fd = (total(&a) - total(&b)) / (2.0 * h);
                let g = grads.values[ti][k];
                let err = (fd - g).abs() / fd.abs().max(g.abs()).max(1e-5);
                assert!(err < 1e-4, "{}[{k}]: fd {fd} analytic {g}", t.name);
            }
        }
    }

    #[test]
    fn single_event_is_always_predicted() {
        let s = stream_from(2, 1, &[vec![0, 0], vec![0, 0]]);
        let p = ModelParams::new(tiny_config(), 2, 1, 1).unwrap();
        let mut st = fresh_state(&p);
        for row in replay(&p, &mut st, &s, 0.0).unwrap() {
            for f in row {
                assert_eq!(f.pattern_event, 2);
                assert!((f.distribution.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn learns_alternating_stream() {
        let s = alternating(60);
        let p = ModelParams::new(tiny_config(), 1, 2, 3).unwrap();
        let cfg = TrainConfig {
            epochs: 40,
            lr: 1e-2,
            seed: 1,
        };
        let mut model = train(&s, p, &cfg).unwrap();
        let tail = stream_from(1, 2, &(60..100).map(|t| vec![t % 2]).collect::<Vec<_>>());
        let f = replay(&model.params, &mut model.state, &tail, 60.0).unwrap();
        let hits = f
            .iter()
            .enumerate()
            .filter(|(i, row)| row[0].pattern_event == 1 + (60 + i) % 2)
            .count();
        assert!(hits as f64 / f.len() as f64 > 0.9, "{hits}/{}", f.len());
    }
}
