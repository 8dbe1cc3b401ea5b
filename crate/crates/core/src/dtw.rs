//! Dynamic time warping with an optional Sakoe-Chiba band, and the
//! window × series × event similarity tensor built from it.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::{znorm, MultivariateSeries, WindowSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DtwParams {
    /// Sakoe-Chiba half-width; `None` is unbanded.
    pub band_radius: Option<usize>,
    /// z-normalize both inputs before alignment.
    pub normalize_inputs: bool,
}

impl DtwParams {
    pub const fn unbanded() -> Self {
        Self {
            band_radius: None,
            normalize_inputs: false,
        }
    }

    /// Defaults for event matching: raw values, band ceil(length / 10).
    pub fn for_matching(window_len: usize) -> Self {
        Self {
            band_radius: Some(window_len.div_ceil(10)),
            normalize_inputs: false,
        }
    }

    /// Defaults for motif clustering: z-normalized, unbanded.
    pub const fn for_clustering() -> Self {
        Self {
            band_radius: None,
            normalize_inputs: true,
        }
    }
}

/// Cumulative absolute-difference cost of the optimal warping path.
pub fn dtw_distance(a: &[f64], b: &[f64], params: &DtwParams) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("dtw input".into()));
    }
    if params.normalize_inputs {
        return dtw_raw(&znorm(a), &znorm(b), params.band_radius);
    }
    dtw_raw(a, b, params.band_radius)
}

fn dtw_raw(a: &[f64], b: &[f64], band: Option<usize>) -> Result<f64> {
    let (n, m) = (a.len(), b.len());
    let diff = n.abs_diff(m);
    let r = match band {
        Some(r) if r < diff => return Err(Error::InfeasibleBand { radius: r, diff }),
        Some(r) => r,
        None => n.max(m),
    };
    // Two rolling rows over j ∈ 0..=m, with index 0 as the boundary column.
    let mut prev = vec![f64::INFINITY; m + 1];
    let mut cur = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    for i in 1..=n {
        cur.iter_mut().for_each(|c| *c = f64::INFINITY);
        let lo = i.saturating_sub(r).max(1);
        let hi = (i + r).min(m);
        let ai = a[i - 1];
        for j in lo..=hi {
            let best = prev[j - 1].min(prev[j]).min(cur[j - 1]);
            cur[j] = (ai - b[j - 1]).abs() + best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m])
}

/// DTW distances of every (window, series, event) triple.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityTensor {
    windows: usize,
    series: usize,
    events: usize,
    values: Vec<f64>,
}

const TENSOR_MAGIC: &[u8; 4] = b"SIMT";
const TENSOR_VERSION: u32 = 1;

impl SimilarityTensor {
    pub fn from_values(
        windows: usize,
        series: usize,
        events: usize,
        values: Vec<f64>,
    ) -> Result<Self> {
        if values.len() != windows * series * events {
            return Err(Error::Shape(format!(
                "{} values for shape {windows}x{series}x{events}",
                values.len()
            )));
        }
        Ok(Self {
            windows,
            series,
            events,
            values,
        })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.windows, self.series, self.events)
    }

    pub fn get(&self, t: usize, m: usize, e: usize) -> f64 {
        self.values[(t * self.series + m) * self.events + e]
    }

    /// Distances of series `m` at window `t` to every event.
    pub fn row(&self, t: usize, m: usize) -> &[f64] {
        let s = (t * self.series + m) * self.events;
        &self.values[s..s + self.events]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `t,m,e,value` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,m,e,value\n");
        for t in 0..self.windows {
            for m in 0..self.series {
                for e in 0..self.events {
                    out.push_str(&format!("{t},{m},{e},{}\n", self.get(t, m, e)));
                }
            }
        }
        out
    }

    /// Little-endian: magic, version u32, three u64 dims, then f64 values.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + 8 * self.values.len());
        out.extend_from_slice(TENSOR_MAGIC);
        out.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
        for d in [self.windows, self.series, self.events] {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::Format(format!("similarity tensor: {msg}"));
        if bytes.len() < 32 || &bytes[..4] != TENSOR_MAGIC {
            return Err(bad("bad header"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != TENSOR_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let dim = |i: usize| {
            u64::from_le_bytes(bytes[8 + 8 * i..16 + 8 * i].try_into().unwrap()) as usize
        };
        let (w, s, e) = (dim(0), dim(1), dim(2));
        let body = &bytes[32..];
        if body.len() != 8 * w * s * e {
            return Err(bad("truncated body"));
        }
        let values = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::from_values(w, s, e, values)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Entry (t, m, e) is the DTW distance between window t of series m and
/// pattern e.
pub fn similarity_tensor(
    series: &MultivariateSeries,
    patterns: &[Vec<f64>],
    spec: WindowSpec,
    params: &DtwParams,
) -> Result<SimilarityTensor> {
    if patterns.is_empty() {
        return Err(Error::Empty("no event patterns".into()));
    }
    spec.validate(series.len())?;
    let windows = spec.count(series.len());
    let (d, k) = (series.dims(), patterns.len());
    let values = (0..windows * d)
        .into_par_iter()
        .map(|cell| {
            let (t, m) = (cell / d, cell % d);
            let seg = series.segment(m, spec.start(t), spec.length);
            patterns
                .iter()
                .map(|p| dtw_distance(seg, p, params))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    SimilarityTensor::from_values(windows, d, k, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const RAW: DtwParams = DtwParams::unbanded();

    #[test]
    fn hand_traced_values() {
        assert_eq!(dtw_distance(&[0.0, 0.0], &[1.0, 1.0], &RAW).unwrap(), 2.0);
        assert_eq!(
            dtw_distance(&[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0, 0.0], &RAW).unwrap(),
            0.0
        );
    }

    #[test]
    fn infeasible_band() {
        let p = DtwParams {
            band_radius: Some(0),
            normalize_inputs: false,
        };
        assert!(matches!(
            dtw_distance(&[1.0, 2.0], &[1.0], &p),
            Err(Error::InfeasibleBand { radius: 0, diff: 1 })
        ));
        assert!(dtw_distance(&[1.0], &[], &RAW).is_err());
    }

    #[test]
    fn tensor_shape_and_entries() {
        let s = MultivariateSeries::from_columns(
            vec![vec![0.0, 1.0, 2.0, 3.0, 4.0], vec![4.0, 3.0, 2.0, 1.0, 0.0]],
            None,
        )
        .unwrap();
        let pats = vec![vec![0.0, 1.0, 2.0], vec![2.0, 1.0, 0.0]];
        let spec = WindowSpec::new(3, 1).unwrap();
        let p = DtwParams::for_matching(3);
        let tens = similarity_tensor(&s, &pats, spec, &p).unwrap();
        assert_eq!(tens.shape(), (3, 2, 2));
        for t in 0..3 {
            for m in 0..2 {
                for (e, pat) in pats.iter().enumerate() {
                    let want = dtw_distance(s.segment(m, t, 3), pat, &p).unwrap();
                    assert_eq!(tens.get(t, m, e).to_bits(), want.to_bits());
                }
            }
        }
        let back = SimilarityTensor::from_bytes(&tens.to_bytes()).unwrap();
        assert_eq!(back, tens);
    }

    #[test]
    fn self_match_tensor_is_zero() {
        let s = MultivariateSeries::from_columns(vec![vec![1.0; 12]], None).unwrap();
        let tens =
            similarity_tensor(&s, &[vec![1.0; 4]], WindowSpec::new(4, 2).unwrap(), &RAW).unwrap();
        assert!(tens.values().iter().all(|&v| v == 0.0));
    }

    proptest! {
        #[test]
        fn symmetric_and_identity(a in prop::collection::vec(-5f64..5.0, 1..24), b in prop::collection::vec(-5f64..5.0, 1..24)) {
            let ab = dtw_distance(&a, &b, &RAW).unwrap();
            let ba = dtw_distance(&b, &a, &RAW).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab, ba);
            prop_assert_eq!(dtw_distance(&a, &a, &RAW).unwrap(), 0.0);
        }

        #[test]
        fn wide_band_equals_unbanded(a in prop::collection::vec(-5f64..5.0, 1..24), b in prop::collection::vec(-5f64..5.0, 1..24)) {
            let wide = DtwParams { band_radius: Some(a.len().max(b.len())), normalize_inputs: false };
            prop_assert_eq!(dtw_distance(&a, &b, &wide).unwrap(), dtw_distance(&a, &b, &RAW).unwrap());
        }
    }
}
