//! Exact matrix profile over one univariate series and greedy top-K motif extraction.
//!
//! The profile is computed diagonal by diagonal with the streaming dot-product
//! update, so each pair costs O(1) after the first product on its diagonal.
//! Diagonals are split across threads; per-thread partial profiles are merged
//! with the lowest-index tie rule, which keeps the output independent of the
//! split.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::{znorm, MultivariateSeries, VAR_EPS};

/// Recompute the running dot product from scratch this often along a diagonal.
const REFRESH_EVERY: usize = 512;

/// ceil(window_len / 2).
pub fn exclusion_zone(window_len: usize) -> usize {
    window_len.div_ceil(2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixProfile {
    pub window: usize,
    pub exclusion_zone: usize,
    /// z-normalized Euclidean distance to the nearest non-trivial neighbor.
    pub profile: Vec<f64>,
    /// `None` only when no position lies outside the exclusion zone.
    pub index: Vec<Option<usize>>,
}

impl MatrixProfile {
    pub fn len(&self) -> usize {
        self.profile.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profile.is_empty()
    }

    /// `position,profile,neighbor` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("position,profile,neighbor\n");
        for (i, (p, j)) in self.profile.iter().zip(&self.index).enumerate() {
            let j = j.map(|j| j.to_string()).unwrap_or_default();
            out.push_str(&format!("{i},{p},{j}\n"));
        }
        out
    }
}

struct WindowStats {
    mean: Vec<f64>,
    sd: Vec<f64>,
}

fn window_stats(x: &[f64], window_len: usize) -> WindowStats {
    let n = x.len() - window_len + 1;
    let mut mean = Vec::with_capacity(n);
    let mut sd = Vec::with_capacity(n);
    for i in 0..n {
        let (m, s) = crate::series::mean_std(&x[i..i + window_len]);
        mean.push(m);
        sd.push(s);
    }
    WindowStats { mean, sd }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn pair_distance(qt: f64, i: usize, j: usize, window_len: usize, st: &WindowStats) -> f64 {
    let flat_i = st.sd[i] < VAR_EPS;
    let flat_j = st.sd[j] < VAR_EPS;
    match (flat_i, flat_j) {
        (true, true) => 0.0,
        (true, false) | (false, true) => (window_len as f64).sqrt(),
        (false, false) => {
            let t = window_len as f64;
            let rho = (qt - t * st.mean[i] * st.mean[j]) / (t * st.sd[i] * st.sd[j]);
            (2.0 * t * (1.0 - rho.clamp(-1.0, 1.0))).max(0.0).sqrt()
        }
    }
}

#[inline]
fn improve(profile: &mut [f64], index: &mut [Option<usize>], i: usize, j: usize, d: f64) {
    let better = match index[i] {
        None => true,
        Some(cur) => d < profile[i] || (d == profile[i] && j < cur),
    };
    if better {
        profile[i] = d;
        index[i] = Some(j);
    }
}

/// Exact matrix profile of `x` for window length `window_len`.
pub fn matrix_profile(x: &[f64], window_len: usize) -> Result<MatrixProfile> {
    if window_len < 2 {
        return Err(Error::InvalidParam(format!(
            "window length {window_len} < 2"
        )));
    }
    if x.len() < 2 * window_len {
        return Err(Error::TooShort(format!(
            "matrix profile needs length >= 2 * window, got length={} window={window_len}",
            x.len()
        )));
    }
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { row: i, col: 0 });
    }
    let n = x.len() - window_len + 1;
    let ez = exclusion_zone(window_len);
    let stats = window_stats(x, window_len);

    let diagonals: Vec<usize> = (ez + 1..n).collect();
    let chunk = (diagonals.len() / (4 * rayon::current_num_threads()).max(1)).max(16);

    let init = || (vec![f64::INFINITY; n], vec![None; n]);
    let (profile, index) = diagonals
        .par_chunks(chunk)
        .map(|ks| {
            let (mut profile, mut index) = init();
            for &k in ks {
                let mut qt = 0.0;
                for i in 0..n - k {
                    let j = i + k;
                    if i % REFRESH_EVERY == 0 {
                        qt = dot(&x[i..i + window_len], &x[j..j + window_len]);
                    } else {
                        qt += x[i + window_len - 1] * x[j + window_len - 1] - x[i - 1] * x[j - 1];
                    }
                    let d = pair_distance(qt, i, j, window_len, &stats);
                    improve(&mut profile, &mut index, i, j, d);
                    improve(&mut profile, &mut index, j, i, d);
                }
            }
            (profile, index)
        })
        .reduce(init, |(mut pa, mut ia), (pb, ib)| {
            for i in 0..n {
                if let Some(j) = ib[i] {
                    improve(&mut pa, &mut ia, i, j, pb[i]);
                }
            }
            (pa, ia)
        });

    Ok(MatrixProfile {
        window: window_len,
        exclusion_zone: ez,
        profile,
        index,
    })
}

/// z-normalized Euclidean distance, computed directly.
pub fn znorm_distance(a: &[f64], b: &[f64]) -> f64 {
    znorm(a)
        .iter()
        .zip(znorm(b))
        .map(|(p, q)| (p - q) * (p - q))
        .sum::<f64>()
        .sqrt()
}

/// A window-length raw segment of one series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Motif {
    pub series: usize,
    pub offset: usize,
    pub profile_value: f64,
    pub values: Vec<f64>,
}

/// Motifs of all series, grouped in series order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MotifSet {
    pub window: usize,
    pub motifs: Vec<Motif>,
}

impl MotifSet {
    pub fn len(&self) -> usize {
        self.motifs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.motifs.is_empty()
    }

    pub fn for_series(&self, m: usize) -> impl Iterator<Item = &Motif> {
        self.motifs.iter().filter(move |mo| mo.series == m)
    }
}

/// Greedy selection of up to `k` lowest-profile offsets, masking the
/// exclusion zone around each pick. Ties go to the lowest offset.
pub fn top_k_motifs(mp: &MatrixProfile, series: &[f64], series_id: usize, k: usize) -> Vec<Motif> {
    let mut order: Vec<usize> = (0..mp.len())
        .filter(|&i| mp.profile[i].is_finite())
        .collect();
    order.sort_by(|&a, &b| mp.profile[a].total_cmp(&mp.profile[b]).then(a.cmp(&b)));
    let mut masked = vec![false; mp.len()];
    let mut out = Vec::with_capacity(k);
    for i in order {
        if out.len() == k {
            break;
        }
        if masked[i] {
            continue;
        }
        let lo = i.saturating_sub(mp.exclusion_zone);
        let hi = (i + mp.exclusion_zone + 1).min(mp.len());
        masked[lo..hi].iter_mut().for_each(|m| *m = true);
        out.push(Motif {
            series: series_id,
            offset: i,
            profile_value: mp.profile[i],
            values: series[i..i + mp.window].to_vec(),
        });
    }
    out
}

/// Profiles and top-K motifs for every series, in parallel across series.
pub fn discover_motifs(
    series: &MultivariateSeries,
    window_len: usize,
    k: usize,
) -> Result<MotifSet> {
    let per_series: Vec<Vec<Motif>> = (0..series.dims())
        .into_par_iter()
        .map(|m| {
            let col = series.column(m);
            let mp = matrix_profile(col, window_len)?;
            Ok(top_k_motifs(&mp, col, m, k))
        })
        .collect::<Result<_>>()?;
    Ok(MotifSet {
        window: window_len,
        motifs: per_series.into_iter().flatten().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_force(x: &[f64], window_len: usize) -> Vec<f64> {
        let n = x.len() - window_len + 1;
        let ez = exclusion_zone(window_len);
        (0..n)
            .map(|i| {
                (0..n)
                    .filter(|&j| i.abs_diff(j) > ez)
                    .map(|j| znorm_distance(&x[i..i + window_len], &x[j..j + window_len]))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    }

    #[test]
    fn repeated_pattern_is_zero() {
        let s = [0.0, 1.0, 3.0, 2.0, 5.0];
        let x: Vec<f64> = s.iter().chain(&s).copied().collect();
        let mp = matrix_profile(&x, 5).unwrap();
        assert!(mp.profile[0].abs() < 1e-7);
        assert!(mp.profile[5].abs() < 1e-7);
        assert_eq!(mp.index[0], Some(5));
    }

    #[test]
    fn flat_series_profile_is_zero() {
        let mp = matrix_profile(&[3.0; 40], 8).unwrap();
        assert!(mp.profile.iter().all(|&p| p == 0.0));
    }

    #[test]
    fn too_short_is_error() {
        assert!(matches!(
            matrix_profile(&[1.0; 9], 5),
            Err(Error::TooShort(_))
        ));
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut acc = 0.0;
        let x: Vec<f64> = (0..300)
            .map(|_| {
                acc += rng.random_range(-1.0..1.0);
                acc
            })
            .collect();
        let mp = matrix_profile(&x, 16).unwrap();
        for (a, b) in mp.profile.iter().zip(brute_force(&x, 16)) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
        for (i, j) in mp.index.iter().enumerate() {
            assert!(i.abs_diff(j.unwrap()) > mp.exclusion_zone);
        }
    }

    #[test]
    fn top_k_respects_exclusion_and_ties() {
        let mp = MatrixProfile {
            window: 4,
            exclusion_zone: 2,
            profile: vec![1.0; 12],
            index: vec![Some(0); 12],
        };
        let x = vec![0.0; 15];
        let motifs = top_k_motifs(&mp, &x, 0, 3);
        let offsets: Vec<usize> = motifs.iter().map(|m| m.offset).collect();
        assert_eq!(offsets, vec![0, 3, 6]);

        let mut mp2 = mp.clone();
        mp2.profile[7] = 0.1;
        assert_eq!(top_k_motifs(&mp2, &x, 0, 1)[0].offset, 7);
    }

    #[test]
    fn fewer_motifs_when_exhausted() {
        let mp = MatrixProfile {
            window: 4,
            exclusion_zone: 2,
            profile: vec![1.0; 4],
            index: vec![Some(0); 4],
        };
        assert_eq!(top_k_motifs(&mp, &[0.0; 7], 0, 5).len(), 2);
    }
}
