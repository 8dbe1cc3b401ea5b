//! Multivariate series storage, sliding windows, z-normalization and CSV ingestion.
//!
//! Series are stored column-major: one contiguous vector per univariate series,
//! which is the access pattern of every downstream kernel.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Standard deviations below this are treated as zero variance.
pub const VAR_EPS: f64 = 1e-8;

/// A T×D matrix of finite readings.
#[derive(Debug, Clone, PartialEq)]
pub struct MultivariateSeries {
    columns: Vec<Vec<f64>>,
    ids: Vec<String>,
    len: usize,
}

impl MultivariateSeries {
    /// Builds a series from per-series columns. All columns must share one length ≥ 1.
    pub fn from_columns(columns: Vec<Vec<f64>>, ids: Option<Vec<String>>) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::Empty("series has no columns".into()));
        }
        let len = columns[0].len();
        if len == 0 {
            return Err(Error::Empty("series has no rows".into()));
        }
        for (m, col) in columns.iter().enumerate() {
            if col.len() != len {
                return Err(Error::Shape(format!(
                    "column {m} has {} rows, expected {len}",
                    col.len()
                )));
            }
            if let Some(row) = col.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { row, col: m });
            }
        }
        let ids = match ids {
            Some(ids) if ids.len() == columns.len() => ids,
            Some(ids) => {
                return Err(Error::Shape(format!(
                    "{} ids for {} columns",
                    ids.len(),
                    columns.len()
                )))
            }
            None => (0..columns.len()).map(|m| format!("s{m}")).collect(),
        };
        Ok(Self { columns, ids, len })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map(Vec::len).unwrap_or(0);
        let mut columns = vec![Vec::with_capacity(rows.len()); d];
        for (r, row) in rows.iter().enumerate() {
            if row.len() != d {
                return Err(Error::RowLength {
                    row: r,
                    expected: d,
                    found: row.len(),
                });
            }
            for (c, v) in row.iter().enumerate() {
                columns[c].push(*v);
            }
        }
        Self::from_columns(columns, None)
    }

    /// Number of time steps T.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Number of univariate series D.
    pub fn dims(&self) -> usize {
        self.columns.len()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn column(&self, m: usize) -> &[f64] {
        &self.columns[m]
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn row(&self, t: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[t]).collect()
    }

    pub fn segment(&self, m: usize, start: usize, len: usize) -> &[f64] {
        &self.columns[m][start..start + len]
    }

    /// Rows `[start, end)` as a new series.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.len {
            return Err(Error::Shape(format!(
                "slice [{start}, {end}) out of range for length {}",
                self.len
            )));
        }
        Self::from_columns(
            self.columns
                .iter()
                .map(|c| c[start..end].to_vec())
                .collect(),
            Some(self.ids.clone()),
        )
    }

    /// Sliding windows over the whole series.
    pub fn windows(&self, spec: WindowSpec) -> Result<Vec<Window<'_>>> {
        spec.validate(self.len)?;
        Ok((0..spec.count(self.len))
            .map(|t| Window {
                index: t,
                start: t * spec.stride,
                len: spec.length,
                series: self,
            })
            .collect())
    }
}

/// Window length and stride, both in time steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub length: usize,
    pub stride: usize,
}

impl WindowSpec {
    pub fn new(length: usize, stride: usize) -> Result<Self> {
        let spec = Self { length, stride };
        if length == 0 || stride == 0 || stride > length {
            return Err(Error::Window(format!(
                "need 1 <= stride <= length, got length {length}, stride {stride}"
            )));
        }
        Ok(spec)
    }

    pub fn validate(&self, series_len: usize) -> Result<()> {
        Self::new(self.length, self.stride)?;
        if self.length > series_len {
            return Err(Error::Window(format!(
                "window length {} exceeds series length {series_len}",
                self.length
            )));
        }
        Ok(())
    }

    /// floor((len - window) / stride) + 1, or 0 when the window does not fit.
    pub fn count(&self, series_len: usize) -> usize {
        if self.length > series_len {
            0
        } else {
            (series_len - self.length) / self.stride + 1
        }
    }

    pub fn start(&self, t: usize) -> usize {
        t * self.stride
    }
}

/// One window-length slice of every series.
#[derive(Debug, Clone, Copy)]
pub struct Window<'a> {
    pub index: usize,
    pub start: usize,
    pub len: usize,
    series: &'a MultivariateSeries,
}

impl<'a> Window<'a> {
    pub fn segment(&self, m: usize) -> &'a [f64] {
        self.series.segment(m, self.start, self.len)
    }

    pub fn dims(&self) -> usize {
        self.series.dims()
    }
}

/// Mean-zero, unit population-σ copy of `x`; all zeros when σ < [`VAR_EPS`].
pub fn znorm(x: &[f64]) -> Vec<f64> {
    let (mean, sd) = mean_std(x);
    if sd < VAR_EPS {
        return vec![0.0; x.len()];
    }
    x.iter().map(|v| (v - mean) / sd).collect()
}

/// Mean and population standard deviation.
pub fn mean_std(x: &[f64]) -> (f64, f64) {
    if x.is_empty() {
        return (0.0, 0.0);
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.max(0.0).sqrt())
}

/// How a CSV file is laid out.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub header: bool,
    /// Forward-fill non-finite cells instead of rejecting them.
    #[serde(default)]
    pub forward_fill: bool,
}

impl CsvSchema {
    /// SMD machine files: comma separated, no header.
    pub fn smd() -> Self {
        Self {
            header: false,
            forward_fill: false,
        }
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: CsvSchema) -> Result<MultivariateSeries> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text, schema)
}

pub fn parse_csv(text: &str, schema: CsvSchema) -> Result<MultivariateSeries> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let mut ids = None;
    if schema.header {
        match lines.next() {
            Some((_, h)) => {
                ids = Some(
                    h.split(',')
                        .map(|s| s.trim().to_string())
                        .collect::<Vec<_>>(),
                )
            }
            None => return Err(Error::Empty("csv has no header".into())),
        }
    }
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = ids.as_ref().map(Vec::len);
    for (row_no, line) in lines {
        let cells: Vec<&str> = line.split(',').collect();
        let expected = *width.get_or_insert(cells.len());
        if cells.len() != expected {
            return Err(Error::RowLength {
                row: row_no,
                expected,
                found: cells.len(),
            });
        }
        let mut row = Vec::with_capacity(cells.len());
        for (col, cell) in cells.iter().enumerate() {
            let cell = cell.trim();
            let v: f64 = cell.parse().map_err(|_| Error::NonNumeric {
                row: row_no,
                col,
                value: cell.to_string(),
            })?;
            if !v.is_finite() && !schema.forward_fill {
                return Err(Error::NonFinite { row: row_no, col });
            }
            row.push(v);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Empty("csv has no data rows".into()));
    }
    let d = rows[0].len();
    let mut columns: Vec<Vec<f64>> = (0..d)
        .map(|c| rows.iter().map(|r| r[c]).collect())
        .collect();
    if schema.forward_fill {
        for (c, col) in columns.iter_mut().enumerate() {
            forward_fill(col).ok_or(Error::NonFinite { row: 0, col: c })?;
        }
    }
    MultivariateSeries::from_columns(columns, ids)
}

/// Replaces non-finite values by the previous finite one; a leading gap takes
/// the first finite value. `None` when the column has no finite value at all.
fn forward_fill(col: &mut [f64]) -> Option<()> {
    let first = col.iter().copied().find(|v| v.is_finite())?;
    let mut last = first;
    for v in col.iter_mut() {
        if v.is_finite() {
            last = *v;
        } else {
            *v = last;
        }
    }
    Some(())
}

pub fn write_csv(series: &MultivariateSeries, path: impl AsRef<Path>, header: bool) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_csv(series, header)).map_err(|e| Error::io(path, e))
}

pub fn to_csv(series: &MultivariateSeries, header: bool) -> String {
    let mut out = String::new();
    if header {
        out.push_str(&series.ids().join(","));
        out.push('\n');
    }
    for t in 0..series.len() {
        let row: Vec<String> = series.columns().iter().map(|c| c[t].to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Per-series min/max scaling fitted on one partition and applied to others.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMaxScaler {
    pub fn fit(series: &MultivariateSeries) -> Self {
        let (min, max) = series
            .columns()
            .iter()
            .map(|c| {
                c.iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                        (lo.min(v), hi.max(v))
                    })
            })
            .unzip();
        Self { min, max }
    }

    pub fn transform(&self, series: &MultivariateSeries) -> Result<MultivariateSeries> {
        if series.dims() != self.min.len() {
            return Err(Error::Shape(format!(
                "scaler fitted on {} series, got {}",
                self.min.len(),
                series.dims()
            )));
        }
        let cols = series
            .columns()
            .iter()
            .enumerate()
            .map(|(m, c)| {
                let span = self.max[m] - self.min[m];
                c.iter()
                    .map(|v| {
                        if span > VAR_EPS {
                            (v - self.min[m]) / span
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();
        MultivariateSeries::from_columns(cols, Some(series.ids().to_vec()))
    }
}

/// Per-timestamp 0/1 anomaly flags.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSeries {
    flags: Vec<u8>,
}

impl LabelSeries {
    pub fn new(flags: Vec<u8>) -> Result<Self> {
        if let Some(i) = flags.iter().position(|&f| f > 1) {
            return Err(Error::Format(format!("label at {i} is not 0/1")));
        }
        Ok(Self { flags })
    }

    /// Builds flags of length `len` from `[start, end)` segments.
    pub fn from_segments(len: usize, segments: &[(usize, usize)]) -> Result<Self> {
        let mut flags = vec![0u8; len];
        for &(s, e) in segments {
            if s >= e || e > len {
                return Err(Error::Format(format!(
                    "segment [{s}, {e}) invalid for length {len}"
                )));
            }
            flags[s..e].iter_mut().for_each(|f| *f = 1);
        }
        Ok(Self { flags })
    }

    pub fn flags(&self) -> &[u8] {
        &self.flags
    }

    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    /// Maximal runs of 1s as `[start, end)`.
    pub fn segments(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut start = None;
        for (i, &f) in self.flags.iter().enumerate() {
            match (f, start) {
                (1, None) => start = Some(i),
                (0, Some(s)) => {
                    out.push((s, i));
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            out.push((s, self.flags.len()));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelFormat {
    /// One 0/1 value per row.
    #[default]
    Points,
    /// `start,end` rows, inclusive start and exclusive end.
    Segments,
}

pub fn load_labels(path: impl AsRef<Path>, format: LabelFormat, len: usize) -> Result<LabelSeries> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_labels(&text, format, len)
}

/// Parses labels. `len` is only used by the segment format. A non-numeric
/// first line is treated as a header.
pub fn parse_labels(text: &str, format: LabelFormat, len: usize) -> Result<LabelSeries> {
    let mut rows: Vec<Vec<&str>> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split(',').map(str::trim).collect())
        .collect();
    if rows
        .first()
        .is_some_and(|r| r.iter().any(|c| c.parse::<f64>().is_err()))
    {
        rows.remove(0);
    }
    let parse = |row: usize, col: usize, s: &str| -> Result<usize> {
        s.parse::<f64>()
            .ok()
            .filter(|v| v.fract() == 0.0 && *v >= 0.0)
            .map(|v| v as usize)
            .ok_or_else(|| Error::NonNumeric {
                row,
                col,
                value: s.to_string(),
            })
    };
    match format {
        LabelFormat::Points => {
            let mut flags = Vec::with_capacity(rows.len());
            for (r, row) in rows.iter().enumerate() {
                if row.len() != 1 {
                    return Err(Error::RowLength {
                        row: r,
                        expected: 1,
                        found: row.len(),
                    });
                }
                flags.push(parse(r, 0, row[0])? as u8);
            }
            LabelSeries::new(flags)
        }
        LabelFormat::Segments => {
            let mut segs = Vec::with_capacity(rows.len());
            for (r, row) in rows.iter().enumerate() {
                if row.len() != 2 {
                    return Err(Error::RowLength {
                        row: r,
                        expected: 2,
                        found: row.len(),
                    });
                }
                segs.push((parse(r, 0, row[0])?, parse(r, 1, row[1])?));
            }
            LabelSeries::from_segments(len, &segs)
        }
    }
}

pub fn labels_to_csv(labels: &LabelSeries) -> String {
    let mut out = String::with_capacity(labels.len() * 2);
    for f in labels.flags() {
        out.push_str(if *f == 1 { "1\n" } else { "0\n" });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_small_csv() {
        let s = parse_csv("0,1\n1,2\n2,3", CsvSchema::default()).unwrap();
        assert_eq!((s.len(), s.dims()), (3, 2));
        assert_eq!(s.column(1), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn header_names_series() {
        let s = parse_csv(
            "a,b\n0,1\n",
            CsvSchema {
                header: true,
                forward_fill: false,
            },
        )
        .unwrap();
        assert_eq!(s.ids(), &["a".to_string(), "b".to_string()]);
    }

    #[test]
    fn rejects_empty_and_malformed() {
        assert!(matches!(
            parse_csv("", CsvSchema::default()),
            Err(Error::Empty(_))
        ));
        assert!(matches!(
            parse_csv("0,1\n1\n", CsvSchema::default()),
            Err(Error::RowLength { row: 1, .. })
        ));
        assert!(matches!(
            parse_csv("0,1\n1,x\n", CsvSchema::default()),
            Err(Error::NonNumeric { row: 1, col: 1, .. })
        ));
        assert!(matches!(
            parse_csv("0,1\nNaN,2\n", CsvSchema::default()),
            Err(Error::NonFinite { row: 1, col: 0 })
        ));
    }

    #[test]
    fn forward_fill_imputes() {
        let schema = CsvSchema {
            header: false,
            forward_fill: true,
        };
        let s = parse_csv("nan,1\n2,inf\n3,4\n", schema).unwrap();
        assert_eq!(s.column(0), &[2.0, 2.0, 3.0]);
        assert_eq!(s.column(1), &[1.0, 1.0, 4.0]);
    }

    #[test]
    fn window_counts() {
        let s =
            MultivariateSeries::from_columns(vec![(0..10).map(f64::from).collect()], None).unwrap();
        let w = s.windows(WindowSpec::new(5, 5).unwrap()).unwrap();
        assert_eq!(w.len(), 2);
        assert_eq!(w[0].segment(0), &[0.0, 1.0, 2.0, 3.0, 4.0]);
        assert_eq!(w[1].start, 5);
        assert_eq!(WindowSpec::new(20, 5).unwrap().count(100), 17);
        assert!(s.windows(WindowSpec::new(11, 1).unwrap()).is_err());
        assert!(WindowSpec::new(5, 6).is_err());
    }

    #[test]
    fn znorm_cases() {
        assert_eq!(znorm(&[1.0, 1.0, 1.0, 1.0]), vec![0.0; 4]);
        assert_eq!(znorm(&[0.0, 2.0]), vec![-1.0, 1.0]);
    }

    #[test]
    fn label_segments() {
        let l = parse_labels("0\n1\n1\n0\n1\n", LabelFormat::Points, 0).unwrap();
        assert_eq!(l.segments(), vec![(1, 3), (4, 5)]);
        let l2 = parse_labels("start,end\n1,3\n4,5\n", LabelFormat::Segments, 5).unwrap();
        assert_eq!(l, l2);
    }

    proptest! {
        #[test]
        fn znorm_moments_and_idempotence(x in prop::collection::vec(-1e3f64..1e3, 2..64)) {
            let (_, sd) = mean_std(&x);
            prop_assume!(sd >= VAR_EPS * 10.0);
            let z = znorm(&x);
            let (m, s) = mean_std(&z);
            prop_assert!(m.abs() < 1e-9);
            prop_assert!((s - 1.0).abs() < 1e-9);
            let zz = znorm(&z);
            for (a, b) in z.iter().zip(&zz) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn tiling_reconstructs_prefix(x in prop::collection::vec(-10f64..10.0, 1..200), window_len in 1usize..20) {
            prop_assume!(window_len <= x.len());
            let s = MultivariateSeries::from_columns(vec![x.clone()], None).unwrap();
            let w = s.windows(WindowSpec::new(window_len, window_len).unwrap()).unwrap();
            let joined: Vec<f64> = w.iter().flat_map(|w| w.segment(0).to_vec()).collect();
            prop_assert_eq!(&joined[..], &x[..(x.len() / window_len) * window_len]);
        }

        #[test]
        fn csv_round_trip(rows in prop::collection::vec(prop::collection::vec(-1e6f64..1e6, 3), 1..30)) {
            let s = MultivariateSeries::from_rows(&rows).unwrap();
            let back = parse_csv(&to_csv(&s, true), CsvSchema { header: true, forward_fill: false }).unwrap();
            prop_assert_eq!(s, back);
        }
    }
}
