//! The time-ordered bipartite edge stream: per window, each series links to its
//! best-matching pattern event and to one of the two residual events.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::EventCatalog;
use crate::dtw::SimilarityTensor;
use crate::error::{Error, Result};
use crate::spot::SpotThreshold;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeKind {
    Matched,
    Residual,
}

impl EdgeKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EdgeKind::Matched => "matched",
            EdgeKind::Residual => "residual",
        }
    }
}

/// Series node `m` linked to event node `e` at window `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributedEdge {
    pub t: usize,
    pub m: usize,
    pub e: usize,
    pub kind: EdgeKind,
}

/// One-hot of the series id over D followed by one-hot of the event id over K+2.
pub fn edge_feature(m: usize, e: usize, n_nodes: usize) -> Vec<f64> {
    let mut f = vec![0.0; n_nodes];
    f[m] = 1.0;
    f[e] = 1.0;
    f
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BipartiteEdgeStream {
    pub n_series: usize,
    pub n_events: usize,
    pub n_windows: usize,
    edges: Vec<AttributedEdge>,
}

impl BipartiteEdgeStream {
    pub fn edges(&self) -> &[AttributedEdge] {
        &self.edges
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

    /// The 2D edges of window `t`, matched edges first.
    pub fn window(&self, t: usize) -> &[AttributedEdge] {
        let w = 2 * self.n_series;
        &self.edges[t * w..(t + 1) * w]
    }

    pub fn matched(&self, t: usize, m: usize) -> usize {
        self.window(t)[m].e
    }

    pub fn residual(&self, t: usize, m: usize) -> usize {
        self.window(t)[self.n_series + m].e
    }

    /// Keeps windows `[0, n)`.
    pub fn truncated(&self, n: usize) -> Self {
        let n = n.min(self.n_windows);
        Self {
            n_windows: n,
            edges: self.edges[..n * 2 * self.n_series].to_vec(),
            ..*self
        }
    }

    /// Replaces the event of one edge, keeping ordering intact.
    pub fn with_edge_event(&self, index: usize, e: usize) -> Result<Self> {
        let mut out = self.clone();
        let edge = out
            .edges
            .get_mut(index)
            .ok_or_else(|| Error::Shape(format!("edge {index} out of range")))?;
        let ok = match edge.kind {
            EdgeKind::Matched => e >= self.n_series && e < self.residual_plus(),
            EdgeKind::Residual => e == self.residual_plus() || e == self.residual_minus(),
        };
        if !ok {
            return Err(Error::InvalidParam(format!(
                "event {e} invalid for {:?} edge",
                edge.kind
            )));
        }
        edge.e = e;
        Ok(out)
    }

    /// `t,m,e,kind` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,m,e,kind\n");
        for e in &self.edges {
            out.push_str(&format!("{},{},{},{}\n", e.t, e.m, e.e, e.kind.as_str()));
        }
        out
    }

    pub fn from_csv(text: &str, n_series: usize, n_events: usize) -> Result<Self> {
        let mut matched = Vec::new();
        let mut residual = Vec::new();
        for (i, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != 4 {
                return Err(Error::RowLength {
                    row: i,
                    expected: 4,
                    found: cells.len(),
                });
            }
            let num = |c: usize| {
                cells[c]
                    .trim()
                    .parse::<usize>()
                    .map_err(|_| Error::NonNumeric {
                        row: i,
                        col: c,
                        value: cells[c].to_string(),
                    })
            };
            let (t, m, e) = (num(0)?, num(1)?, num(2)?);
            match cells[3].trim() {
                "matched" => matched.push(AttributedEdge {
                    t,
                    m,
                    e,
                    kind: EdgeKind::Matched,
                }),
                "residual" => residual.push(AttributedEdge {
                    t,
                    m,
                    e,
                    kind: EdgeKind::Residual,
                }),
                other => {
                    return Err(Error::Format(format!(
                        "row {i}: unknown edge kind {other:?}"
                    )))
                }
            }
        }
        assemble_stream(n_series, n_events, matched, residual)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>, n_series: usize, n_events: usize) -> Result<Self> {
        let path = path.as_ref();
        Self::from_csv(
            &fs::read_to_string(path).map_err(|e| Error::io(path, e))?,
            n_series,
            n_events,
        )
    }

    /// One row per series: `series,e_0,e_1,...` with the event node of each window.
    pub fn event_bar_csv(&self, kind: EdgeKind) -> String {
        let mut out = String::from("series");
        for t in 0..self.n_windows {
            out.push_str(&format!(",w{t}"));
        }
        out.push('\n');
        for m in 0..self.n_series {
            out.push_str(&m.to_string());
            for t in 0..self.n_windows {
                let e = match kind {
                    EdgeKind::Matched => self.matched(t, m),
                    EdgeKind::Residual => self.residual(t, m),
                };
                out.push_str(&format!(",{e}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Per (t, m), the pattern event with the smallest distance; ties go to the
/// lowest event id.
pub fn best_match_edges(
    tensor: &SimilarityTensor,
    catalog: &EventCatalog,
) -> Result<Vec<AttributedEdge>> {
    let (w, d, k) = tensor.shape();
    if d != catalog.n_series || k != catalog.n_events() {
        return Err(Error::Shape(format!(
            "tensor {w}x{d}x{k} does not fit catalog with {} series and {} events",
            catalog.n_series,
            catalog.n_events()
        )));
    }
    Ok((0..w * d)
        .into_par_iter()
        .map(|cell| {
            let (t, m) = (cell / d, cell % d);
            let best = argmin(tensor.row(t, m));
            AttributedEdge {
                t,
                m,
                e: catalog.event_node(best),
                kind: EdgeKind::Matched,
            }
        })
        .collect())
}

/// Index of the smallest value; the first wins ties.
pub fn argmin(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x < xs[best] {
            best = i;
        }
    }
    best
}

/// Best-match residual distance for each matched edge.
pub fn match_distances(
    tensor: &SimilarityTensor,
    catalog: &EventCatalog,
    matched: &[AttributedEdge],
) -> Vec<f64> {
    matched
        .iter()
        .map(|e| tensor.get(e.t, e.m, e.e - catalog.n_series))
        .collect()
}

/// Residual edges: `residual_plus` when the best-match distance is strictly
/// above the series level, otherwise `residual_minus`. With `adapt`, each series threshold
/// takes one streaming update per window after classification.
pub fn residual_edges(
    tensor: &SimilarityTensor,
    catalog: &EventCatalog,
    matched: &[AttributedEdge],
    thresholds: &mut [SpotThreshold],
    adapt: bool,
) -> Result<Vec<AttributedEdge>> {
    if thresholds.len() != catalog.n_series {
        return Err(Error::Shape(format!(
            "{} thresholds for {} series",
            thresholds.len(),
            catalog.n_series
        )));
    }
    let dists = match_distances(tensor, catalog, matched);
    let mut out = Vec::with_capacity(matched.len());
    for (edge, dist) in matched.iter().zip(dists) {
        let th = &mut thresholds[edge.m];
        let e = if th.exceeds(dist) {
            catalog.residual_plus
        } else {
            catalog.residual_minus
        };
        if adapt {
            th.update(dist);
        }
        out.push(AttributedEdge {
            e,
            kind: EdgeKind::Residual,
            ..*edge
        });
    }
    Ok(out)
}

/// Merges both edge sets into one stream sorted by (t, kind, m). Both sets
/// must cover the same full (t, m) grid exactly once.
pub fn assemble_stream(
    n_series: usize,
    n_events: usize,
    mut matched: Vec<AttributedEdge>,
    mut residual: Vec<AttributedEdge>,
) -> Result<BipartiteEdgeStream> {
    if n_series == 0 || !matched.len().is_multiple_of(n_series) {
        return Err(Error::Shape(format!(
            "{} matched edges do not tile {n_series} series",
            matched.len()
        )));
    }
    let n_windows = matched.len() / n_series;
    let key = |e: &AttributedEdge| (e.t, e.m);
    matched.sort_by_key(key);
    residual.sort_by_key(key);
    let grid_ok = |edges: &[AttributedEdge], kind: EdgeKind| {
        edges.len() == n_windows * n_series
            && edges
                .iter()
                .enumerate()
                .all(|(i, e)| e.kind == kind && e.t == i / n_series && e.m == i % n_series)
    };
    if !grid_ok(&matched, EdgeKind::Matched) || !grid_ok(&residual, EdgeKind::Residual) {
        return Err(Error::Shape(
            "matched and residual edges cover different (t, m) grids".into(),
        ));
    }
    let (rp, rm) = (n_series + n_events, n_series + n_events + 1);
    if matched.iter().any(|e| e.e < n_series || e.e >= rp)
        || residual.iter().any(|e| e.e != rp && e.e != rm)
    {
        return Err(Error::Shape(
            "edge points at an event id of the wrong class".into(),
        ));
    }
    let mut edges = Vec::with_capacity(2 * matched.len());
    for t in 0..n_windows {
        edges.extend_from_slice(&matched[t * n_series..(t + 1) * n_series]);
        edges.extend_from_slice(&residual[t * n_series..(t + 1) * n_series]);
    }
    Ok(BipartiteEdgeStream {
        n_series,
        n_events,
        n_windows,
        edges,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn catalog(d: usize, k: usize) -> EventCatalog {
        EventCatalog::from_patterns(d, (0..k).map(|i| vec![i as f64; 2]).collect()).unwrap()
    }

    #[test]
    fn argmin_picks_lowest() {
        assert_eq!(argmin(&[0.5, 0.1, 0.9]), 1);
        assert_eq!(argmin(&[0.2, 0.2]), 0);
    }

    #[test]
    fn single_event_always_matched() {
        let cat = catalog(2, 1);
        let tens = SimilarityTensor::from_values(3, 2, 1, vec![1.0; 6]).unwrap();
        let edges = best_match_edges(&tens, &cat).unwrap();
        assert!(edges.iter().all(|e| e.e == 2));
    }

    #[test]
    fn stream_cardinality_and_order() {
        let cat = catalog(2, 2);
        let tens = SimilarityTensor::from_values(
            3,
            2,
            2,
            vec![0.0, 1.0, 2.0, 0.5, 0.1, 0.2, 0.3, 0.0, 0.0, 0.0, 5.0, 1.0],
        )
        .unwrap();
        let matched = best_match_edges(&tens, &cat).unwrap();
        let data: Vec<f64> = (0..60).map(|i| (i % 7) as f64 * 0.1).collect();
        let mut th = vec![SpotThreshold::fit(&data, 1e-3).unwrap(); 2];
        let residual = residual_edges(&tens, &cat, &matched, &mut th, false).unwrap();
        let s = assemble_stream(2, 2, matched, residual).unwrap();
        assert_eq!(s.edges().len(), 12);
        assert!(s.edges().windows(2).all(|w| w[0].t <= w[1].t));
        assert_eq!(s.window(1)[0].e, cat.event_node(0));
        assert_eq!(s.window(1)[1].e, cat.event_node(1));
        let back = BipartiteEdgeStream::from_csv(&s.to_csv(), 2, 2).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn residual_boundary_is_strict() {
        let cat = catalog(1, 1);
        let mut th = vec![SpotThreshold::fit(&[1.0; 60], 1e-3).unwrap()];
        assert_eq!(th[0].level, 1.0);
        let tens = SimilarityTensor::from_values(3, 1, 1, vec![0.0, 1.0, 1.5]).unwrap();
        let matched = best_match_edges(&tens, &cat).unwrap();
        let res = residual_edges(&tens, &cat, &matched, &mut th, false).unwrap();
        let kinds: Vec<usize> = res.iter().map(|e| e.e).collect();
        assert_eq!(
            kinds,
            vec![cat.residual_minus, cat.residual_minus, cat.residual_plus]
        );
    }

    #[test]
    fn grid_mismatch_is_error() {
        let m = vec![AttributedEdge {
            t: 0,
            m: 0,
            e: 1,
            kind: EdgeKind::Matched,
        }];
        let r = vec![AttributedEdge {
            t: 1,
            m: 0,
            e: 2,
            kind: EdgeKind::Residual,
        }];
        assert!(assemble_stream(1, 1, m, r).is_err());
    }

    #[test]
    fn feature_is_two_hot() {
        let f = edge_feature(1, 5, 7);
        assert_eq!(f.len(), 7);
        assert_eq!(f.iter().sum::<f64>(), 2.0);
        assert_eq!((f[1], f[5]), (1.0, 1.0));
    }
}
