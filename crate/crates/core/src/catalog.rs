//! Event catalog: motifs clustered across series into shared events, one
//! medoid pattern per cluster, plus the two residual event nodes.
//!
//! Node id layout: `0..D` are series nodes, `D..D+K` pattern events,
//! `D+K` is the positive residual node and `D+K+1` the negative one.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::{self, DistanceMatrix};
use crate::dtw::{dtw_distance, DtwParams};
use crate::error::{Error, Result};
use crate::motif::MotifSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusteringParams {
    pub min_cluster_size: usize,
    pub dtw: DtwParams,
}

impl Default for ClusteringParams {
    fn default() -> Self {
        Self {
            min_cluster_size: 3,
            dtw: DtwParams::for_clustering(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub series: usize,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    /// Graph node id.
    pub id: usize,
    pub pattern: Vec<f64>,
    pub medoid: Provenance,
    pub members: Vec<Provenance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventCatalog {
    pub n_series: usize,
    pub window: usize,
    pub events: Vec<Event>,
    pub residual_plus: usize,
    pub residual_minus: usize,
}

impl EventCatalog {
    /// Builds a catalog from explicit patterns; ids are assigned in order.
    pub fn from_patterns(n_series: usize, patterns: Vec<Vec<f64>>) -> Result<Self> {
        if patterns.is_empty() {
            return Err(Error::Empty("catalog needs at least one event".into()));
        }
        let window = patterns[0].len();
        if patterns.iter().any(|p| p.len() != window) {
            return Err(Error::Shape("event patterns differ in length".into()));
        }
        let k = patterns.len();
        let events = patterns
            .into_iter()
            .enumerate()
            .map(|(i, pattern)| Event {
                id: n_series + i,
                pattern,
                medoid: Provenance {
                    series: 0,
                    offset: 0,
                },
                members: Vec::new(),
            })
            .collect();
        Ok(Self {
            n_series,
            window,
            events,
            residual_plus: n_series + k,
            residual_minus: n_series + k + 1,
        })
    }

    /// K, the number of pattern events.
    pub fn n_events(&self) -> usize {
        self.events.len()
    }

    /// D + K + 2.
    pub fn n_nodes(&self) -> usize {
        self.n_series + self.events.len() + 2
    }

    pub fn patterns(&self) -> Vec<Vec<f64>> {
        self.events.iter().map(|e| e.pattern.clone()).collect()
    }

    /// Pattern event node id for column `k` of the similarity tensor.
    pub fn event_node(&self, k: usize) -> usize {
        self.n_series + k
    }

    pub fn is_residual(&self, node: usize) -> bool {
        node == self.residual_plus || node == self.residual_minus
    }

    pub fn pattern_of(&self, node: usize) -> Option<&[f64]> {
        node.checked_sub(self.n_series)
            .and_then(|k| self.events.get(k))
            .map(|e| e.pattern.as_slice())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(s)?;
        c.validate()?;
        Ok(c)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    fn validate(&self) -> Result<()> {
        let k = self.events.len();
        if k == 0 {
            return Err(Error::Format("catalog has no events".into()));
        }
        for (i, e) in self.events.iter().enumerate() {
            if e.id != self.n_series + i || e.pattern.len() != self.window {
                return Err(Error::Format(format!(
                    "event {i} has inconsistent id or length"
                )));
            }
        }
        if self.residual_plus != self.n_series + k || self.residual_minus != self.n_series + k + 1 {
            return Err(Error::Format("residual node ids out of place".into()));
        }
        Ok(())
    }
}

/// Member with the smallest summed distance to the other members; ties go to
/// the earliest member.
pub fn medoid(members: &[usize], dist: &DistanceMatrix) -> usize {
    let mut best = (f64::INFINITY, members[0]);
    for &i in members {
        let s: f64 = members.iter().map(|&j| dist.get(i, j)).sum();
        if s < best.0 {
            best = (s, i);
        }
    }
    best.1
}

/// Pairwise motif distances under `params.dtw`.
pub fn motif_distances(motifs: &MotifSet, params: &ClusteringParams) -> Result<DistanceMatrix> {
    let n = motifs.len();
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .collect();
    let upper = pairs
        .par_iter()
        .map(|&(i, j)| {
            dtw_distance(
                &motifs.motifs[i].values,
                &motifs.motifs[j].values,
                &params.dtw,
            )
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(DistanceMatrix::from_upper(n, &upper))
}

/// Clusters motifs into events. Noise motifs become singleton events.
/// Events are ordered by their lowest member index.
pub fn cluster_motifs(motifs: &MotifSet, params: &ClusteringParams) -> Result<EventCatalog> {
    if motifs.is_empty() {
        return Err(Error::Empty("no motifs to cluster".into()));
    }
    if params.min_cluster_size < 2 {
        return Err(Error::InvalidParam("min_cluster_size must be >= 2".into()));
    }
    let n_series = motifs
        .motifs
        .iter()
        .map(|m| m.series + 1)
        .max()
        .unwrap_or(0);
    let dist = motif_distances(motifs, params)?;
    let labels = density::cluster(&dist, params.min_cluster_size);

    let n_clusters = labels.iter().flatten().map(|&l| l + 1).max().unwrap_or(0);
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); n_clusters];
    let mut singletons = Vec::new();
    for (i, l) in labels.iter().enumerate() {
        match l {
            Some(c) => groups[*c].push(i),
            None => singletons.push(vec![i]),
        }
    }
    groups.extend(singletons);
    groups.sort_by_key(|g| g[0]);

    let prov = |i: usize| Provenance {
        series: motifs.motifs[i].series,
        offset: motifs.motifs[i].offset,
    };
    let events: Vec<Event> = groups
        .iter()
        .enumerate()
        .map(|(k, members)| {
            let med = medoid(members, &dist);
            Event {
                id: n_series + k,
                pattern: motifs.motifs[med].values.clone(),
                medoid: prov(med),
                members: members.iter().map(|&i| prov(i)).collect(),
            }
        })
        .collect();
    let k = events.len();
    Ok(EventCatalog {
        n_series,
        window: motifs.window,
        events,
        residual_plus: n_series + k,
        residual_minus: n_series + k + 1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motif::Motif;

    fn motif(series: usize, offset: usize, values: Vec<f64>) -> Motif {
        Motif {
            series,
            offset,
            profile_value: 0.0,
            values,
        }
    }

    #[test]
    fn medoid_cases() {
        let d = DistanceMatrix::from_upper(3, &[1.0, 1.0, 3.0]);
        assert_eq!(medoid(&[0, 1, 2], &d), 0);
        assert_eq!(medoid(&[2], &d), 2);
        let eq = DistanceMatrix::from_fn(4, |_, _| 1.0);
        assert_eq!(medoid(&[0, 1, 2, 3], &eq), 0);
    }

    #[test]
    fn identical_segments_one_event() {
        let seg = vec![0.0, 1.0, 0.0, -1.0, 0.0];
        let motifs = MotifSet {
            window: 5,
            motifs: (0..6).map(|i| motif(i / 3, i * 10, seg.clone())).collect(),
        };
        let cat = cluster_motifs(&motifs, &ClusteringParams::default()).unwrap();
        assert_eq!(cat.n_events(), 1);
        assert_eq!(
            cat.events[0].medoid,
            Provenance {
                series: 0,
                offset: 0
            }
        );
        assert_eq!(cat.events[0].members.len(), 6);
        assert_eq!((cat.residual_plus, cat.residual_minus), (3, 4));
    }

    #[test]
    fn single_motif_single_event() {
        let motifs = MotifSet {
            window: 3,
            motifs: vec![motif(0, 0, vec![1.0, 2.0, 3.0])],
        };
        let cat = cluster_motifs(&motifs, &ClusteringParams::default()).unwrap();
        assert_eq!(cat.n_events(), 1);
        assert_eq!(cat.n_nodes(), 4);
    }

    #[test]
    fn json_round_trip() {
        let cat = EventCatalog::from_patterns(2, vec![vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(
            EventCatalog::from_json(&cat.to_json().unwrap()).unwrap(),
            cat
        );
    }
}
