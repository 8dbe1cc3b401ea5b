use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stream::AttributedEdge;

/// One past interaction seen from a node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub neighbor: usize,
    /// Series endpoint, for the edge feature.
    pub m: usize,
    /// Event endpoint, for the edge feature.
    pub e: usize,
    pub time: f64,
}

/// A message waiting to be folded into a node's memory at the next batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawMessage {
    pub m: usize,
    pub e: usize,
    pub time: f64,
    /// Time since the node's previous memory update.
    pub dt: f64,
    pub own: Vec<f64>,
    pub peer: Vec<f64>,
}

/// Per-node memory, last update time, recent-neighbor rings and pending
/// messages. Everything here is detached from the gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalState {
    pub memory: Vec<Vec<f64>>,
    pub last_update: Vec<f64>,
    pub neighbors: Vec<VecDeque<Interaction>>,
    pub pending: Vec<Vec<RawMessage>>,
    pub capacity: usize,
}

impl TemporalState {
    pub fn new(n_nodes: usize, d_mem: usize, capacity: usize) -> Self {
        Self {
            memory: vec![vec![0.0; d_mem]; n_nodes],
            last_update: vec![0.0; n_nodes],
            neighbors: vec![VecDeque::with_capacity(capacity); n_nodes],
            pending: vec![Vec::new(); n_nodes],
            capacity,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.memory.len()
    }

    pub fn has_pending(&self, node: usize) -> bool {
        !self.pending[node].is_empty()
    }

    /// Writes updated memories for every node with pending messages and
    /// clears the queue.
    pub fn commit(&mut self, updates: Vec<(usize, Vec<f64>)>) -> Result<()> {
        for (node, mem) in updates {
            if mem.iter().any(|v| !v.is_finite()) {
                return Err(Error::Diverged(format!(
                    "non-finite memory for node {node}"
                )));
            }
            if let Some(msg) = self.pending[node].first() {
                self.last_update[node] = msg.time;
            }
            self.memory[node] = mem;
        }
        self.pending.iter_mut().for_each(Vec::clear);
        Ok(())
    }

    /// Queues one message per endpoint of every edge and records the
    /// interactions in the neighbor rings.
    pub fn observe(&mut self, edges: &[AttributedEdge], time: f64) {
        for edge in edges {
            for (own, peer) in [(edge.m, edge.e), (edge.e, edge.m)] {
                let msg = RawMessage {
                    m: edge.m,
                    e: edge.e,
                    time,
                    dt: time - self.last_update[own],
                    own: self.memory[own].clone(),
                    peer: self.memory[peer].clone(),
                };
                self.pending[own].push(msg);
                let ring = &mut self.neighbors[own];
                if ring.len() == self.capacity {
                    ring.pop_front();
                }
                ring.push_back(Interaction {
                    neighbor: peer,
                    m: edge.m,
                    e: edge.e,
                    time,
                });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::EdgeKind;

    fn edge(m: usize, e: usize) -> AttributedEdge {
        AttributedEdge {
            t: 0,
            m,
            e,
            kind: EdgeKind::Matched,
        }
    }

    #[test]
    fn first_messages_carry_zero_memory() {
        let mut s = TemporalState::new(4, 3, 2);
        s.observe(&[edge(0, 2)], 0.0);
        assert_eq!(s.pending[0].len(), 1);
        assert_eq!(s.pending[2].len(), 1);
        assert!(s.pending[0][0]
            .own
            .iter()
            .chain(&s.pending[0][0].peer)
            .all(|v| *v == 0.0));
        assert_eq!(s.neighbors[2][0].neighbor, 0);
    }

    #[test]
    fn ring_keeps_most_recent() {
        let mut s = TemporalState::new(4, 1, 2);
        for t in 0..5 {
            s.observe(&[edge(0, 2 + t % 2)], t as f64);
        }
        let times: Vec<f64> = s.neighbors[0].iter().map(|i| i.time).collect();
        assert_eq!(times, vec![3.0, 4.0]);
    }

    #[test]
    fn commit_sets_update_time_and_clears() {
        let mut s = TemporalState::new(3, 2, 4);
        s.observe(&[edge(0, 1)], 7.0);
        s.commit(vec![(0, vec![1.0, 2.0]), (1, vec![3.0, 4.0])])
            .unwrap();
        assert_eq!(s.last_update[0], 7.0);
        assert_eq!(s.memory[1], vec![3.0, 4.0]);
        assert!(s.pending.iter().all(Vec::is_empty));
        s.observe(&[edge(0, 1)], 9.0);
        assert_eq!(s.pending[0][0].dt, 2.0);
    }

    #[test]
    fn non_finite_commit_is_error() {
        let mut s = TemporalState::new(2, 1, 1);
        assert!(matches!(
            s.commit(vec![(0, vec![f64::NAN])]),
            Err(Error::Diverged(_))
        ));
    }
}
