//! Anomaly read-out: forecast mismatch, residual surprisal and their
//! per-window aggregation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::EventCatalog;
use crate::dtw::{dtw_distance, DtwParams};
use crate::error::{Error, Result};
use crate::model::SeriesForecast;
use crate::series::{MultivariateSeries, WindowSpec};
use crate::spot::{fit_gpd, quantile_sorted, Gpd};
use crate::stream::BipartiteEdgeStream;

const TAIL_LEVEL: f64 = 0.98;
const MIN_TAIL_PEAKS: usize = 10;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    Max,
    #[default]
    Sum,
}

/// Which terms enter the score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    /// Forecast mismatch times surprisal, with optional ablations.
    Full {
        use_forecast: bool,
        use_residual: bool,
    },
    /// Surprisal of every change magnitude, no model involved.
    SurprisalOnly,
}

impl Default for ScoreMode {
    fn default() -> Self {
        ScoreMode::Full {
            use_forecast: true,
            use_residual: true,
        }
    }
}

/// Smoothed survival function of one series' change magnitudes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalModel {
    sorted: Vec<f64>,
    anchor: f64,
    tail: Option<Gpd>,
    n_peaks: usize,
}

impl SurvivalModel {
    pub fn fit(samples: &[f64]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Empty("no change magnitudes to fit".into()));
        }
        if samples.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidParam(
                "change magnitudes must be finite and non-negative".into(),
            ));
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let anchor = quantile_sorted(&sorted, TAIL_LEVEL);
        let peaks: Vec<f64> = sorted
            .iter()
            .filter(|&&v| v > anchor)
            .map(|v| v - anchor)
            .collect();
        let tail = if peaks.len() >= MIN_TAIL_PEAKS {
            fit_gpd(&peaks)
        } else {
            None
        };
        Ok(Self {
            sorted,
            anchor,
            tail,
            n_peaks: peaks.len(),
        })
    }

    pub fn n_samples(&self) -> usize {
        self.sorted.len()
    }

    /// Empirical (#{> x} + 1)/(n + 1), interpolated between distinct order
    /// statistics and clamped to [1/(n+1), n/(n+1)].
    fn empirical(&self, x: f64) -> f64 {
        let s = &self.sorted;
        let n = s.len() as f64;
        let at = |v: f64| (s.len() - s.partition_point(|&y| y <= v)) as f64;
        if x < s[0] {
            return n / (n + 1.0);
        }
        if x >= s[s.len() - 1] {
            return 1.0 / (n + 1.0);
        }
        // distinct neighbours lo <= x < hi
        let hi_idx = s.partition_point(|&y| y <= x);
        let (lo, hi) = (s[hi_idx - 1], s[hi_idx]);
        let (slo, shi) = ((at(lo) + 1.0) / (n + 1.0), (at(hi) + 1.0) / (n + 1.0));
        let w = (x - lo) / (hi - lo);
        slo + w * (shi - slo)
    }

    /// Survival probability in (0, 1].
    pub fn survival(&self, x: f64) -> f64 {
        let mut s = self.empirical(x);
        if let Some(g) = self.tail {
            if x > self.anchor {
                let frac = self.n_peaks as f64 / self.sorted.len() as f64;
                s = s.min(frac * g.survival(x - self.anchor));
            }
        }
        s.max(f64::MIN_POSITIVE)
    }

    /// Negative log survival: the surprisal of a change of size `x`.
    pub fn surprisal(&self, x: f64) -> f64 {
        -self.survival(x).ln()
    }
}

/// One survival model per series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeSurprisal {
    pub lag: usize,
    pub series: Vec<SurvivalModel>,
}

impl ChangeSurprisal {
    pub fn surprisal(&self, m: usize, x: f64) -> f64 {
        self.series[m].surprisal(x)
    }
}

/// ‖a − b‖₂.
pub fn change_magnitude(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Magnitude between the window at `start` and the one `lag` steps earlier;
/// `None` when the earlier window would start before step 0.
pub fn lagged_change(x: &[f64], start: usize, len: usize, lag: usize) -> Option<f64> {
    let prev = start.checked_sub(lag)?;
    Some(change_magnitude(
        &x[start..start + len],
        &x[prev..prev + len],
    ))
}

/// Fits the change-magnitude distributions on the training partition, using
/// the windows of `spec` lagged by one window length.
pub fn fit_change_surprisal(
    train: &MultivariateSeries,
    spec: WindowSpec,
) -> Result<ChangeSurprisal> {
    if train.len() < 2 * spec.length {
        return Err(Error::TooShort(format!(
            "surprisal fit needs at least {} training steps, got {}",
            2 * spec.length,
            train.len()
        )));
    }
    let count = spec.count(train.len());
    let series = (0..train.dims())
        .map(|m| {
            let x = train.column(m);
            let mags: Vec<f64> = (0..count)
                .filter_map(|t| lagged_change(x, spec.start(t), spec.length, spec.length))
                .collect();
            SurvivalModel::fit(&mags)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ChangeSurprisal {
        lag: spec.length,
        series,
    })
}

/// Forecast factor: DTW distance between the observed window and the forecast pattern.
pub fn forecast_score(window: &[f64], pattern: &[f64], params: &DtwParams) -> Result<f64> {
    dtw_distance(window, pattern, params)
}

/// Residual factor: surprisal of the change when a positive residual was observed but a
/// negative one forecast, otherwise the neutral 1.
pub fn residual_score(
    observed: usize,
    predicted: usize,
    catalog: &EventCatalog,
    change: Option<f64>,
    model: &SurvivalModel,
) -> f64 {
    match change {
        Some(c) if observed == catalog.residual_plus && predicted == catalog.residual_minus => {
            model.surprisal(c)
        }
        _ => 1.0,
    }
}

pub fn aggregate(products: &[f64], mode: Aggregation) -> f64 {
    match mode {
        Aggregation::Max => products.iter().copied().fold(0.0, f64::max),
        Aggregation::Sum => products.iter().sum(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowScore {
    pub t: usize,
    pub start: usize,
    pub forecast: Vec<f64>,
    pub residual: Vec<f64>,
    pub max: f64,
    pub sum: f64,
}

impl WindowScore {
    pub fn value(&self, mode: Aggregation) -> f64 {
        match mode {
            Aggregation::Max => self.max,
            Aggregation::Sum => self.sum,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSeries {
    pub aggregation: Aggregation,
    pub spec: WindowSpec,
    pub windows: Vec<WindowScore>,
}

impl ScoreSeries {
    pub fn window_values(&self) -> Vec<f64> {
        self.windows
            .iter()
            .map(|w| w.value(self.aggregation))
            .collect()
    }

    /// Index of the window that scores each step: a window owns its newest
    /// `stride` steps, the first window also owns its prefix and the last
    /// window any trailing steps.
    pub fn step_owners(&self, len: usize) -> Vec<usize> {
        let n = self.windows.len();
        let (window_len, stride) = (self.spec.length, self.spec.stride);
        (0..len)
            .map(|i| {
                if i + stride < window_len || n == 0 {
                    0
                } else {
                    ((i + stride - window_len) / stride).min(n - 1)
                }
            })
            .collect()
    }

    /// Per-step scores of length `len`.
    pub fn step_scores(&self, len: usize) -> Vec<f64> {
        let values = self.window_values();
        self.step_owners(len)
            .into_iter()
            .map(|w| values[w])
            .collect()
    }

    /// `t_step,forecast_<m>...,residual_<m>...,score`.
    pub fn to_csv(&self, len: usize, ids: &[String]) -> String {
        let mut out = String::from("t_step");
        for id in ids {
            out.push_str(&format!(",forecast_{id}"));
        }
        for id in ids {
            out.push_str(&format!(",residual_{id}"));
        }
        out.push_str(",score\n");
        let agg = self.aggregation;
        for (i, w) in self.step_owners(len).into_iter().enumerate() {
            let win = &self.windows[w];
            out.push_str(&i.to_string());
            for v in win.forecast.iter().chain(&win.residual) {
                out.push_str(&format!(",{v}"));
            }
            out.push_str(&format!(",{}\n", win.value(agg)));
        }
        out
    }
}

/// Everything the scorer reads.
pub struct ScoreInputs<'a> {
    pub series: &'a MultivariateSeries,
    pub spec: WindowSpec,
    pub stream: &'a BipartiteEdgeStream,
    /// Per window, per series; ignored in surprisal-only mode.
    pub forecasts: &'a [Vec<SeriesForecast>],
    pub catalog: &'a EventCatalog,
    pub surprisal: &'a ChangeSurprisal,
    pub dtw: DtwParams,
}

/// Scores every window of the test stream.
pub fn score_windows(
    inputs: &ScoreInputs,
    mode: ScoreMode,
    aggregation: Aggregation,
) -> Result<ScoreSeries> {
    let ScoreInputs {
        series,
        spec,
        stream,
        forecasts,
        catalog,
        surprisal,
        dtw,
    } = *inputs;
    let n = spec.count(series.len());
    let d = series.dims();
    if stream.n_windows != n || stream.n_series != d || surprisal.series.len() != d {
        return Err(Error::Shape(format!(
            "series gives {n} windows x {d} series, stream has {} x {}, surprisal model has {} series",
            stream.n_windows,
            stream.n_series,
            surprisal.series.len()
        )));
    }
    if matches!(mode, ScoreMode::Full { .. })
        && (forecasts.len() != n || forecasts.iter().any(|f| f.len() != d))
    {
        return Err(Error::Shape(
            "forecasts do not cover every window and series".into(),
        ));
    }
    let windows = (0..n)
        .into_par_iter()
        .map(|t| {
            let start = spec.start(t);
            let mut forecast = vec![1.0; d];
            let mut residual = vec![1.0; d];
            for m in 0..d {
                let x = series.column(m);
                let change = lagged_change(x, start, spec.length, surprisal.lag);
                match mode {
                    ScoreMode::SurprisalOnly => {
                        residual[m] = change.map_or(0.0, |c| surprisal.surprisal(m, c));
                    }
                    ScoreMode::Full {
                        use_forecast,
                        use_residual,
                    } => {
                        let f = &forecasts[t][m];
                        if use_forecast {
                            let pattern = catalog.pattern_of(f.pattern_event).ok_or_else(|| {
                                Error::Shape(format!(
                                    "forecast node {} is not a pattern event",
                                    f.pattern_event
                                ))
                            })?;
                            forecast[m] =
                                forecast_score(&x[start..start + spec.length], pattern, &dtw)?;
                        }
                        if use_residual {
                            let observed = stream.residual(t, m);
                            residual[m] = residual_score(
                                observed,
                                f.residual_event,
                                catalog,
                                change,
                                &surprisal.series[m],
                            );
                        }
                    }
                }
            }
            let products: Vec<f64> = forecast.iter().zip(&residual).map(|(a, b)| a * b).collect();
            Ok(WindowScore {
                t,
                start,
                max: aggregate(&products, Aggregation::Max),
                sum: aggregate(&products, Aggregation::Sum),
                forecast,
                residual,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScoreSeries {
        aggregation,
        spec,
        windows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn aggregation_arithmetic() {
        assert_eq!(aggregate(&[2.0, 3.0, 5.0], Aggregation::Max), 5.0);
        assert_eq!(aggregate(&[2.0, 3.0, 5.0], Aggregation::Sum), 10.0);
        assert_eq!(
            aggregate(&[4.0], Aggregation::Max),
            aggregate(&[4.0], Aggregation::Sum)
        );
    }

    #[test]
    fn forecast_score_cases() {
        let p = DtwParams::unbanded();
        assert_eq!(
            forecast_score(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], &p).unwrap(),
            0.0
        );
        assert_eq!(forecast_score(&[1.0, 1.0], &[0.0, 0.0], &p).unwrap(), 2.0);
    }

    #[test]
    fn surprisal_floor_and_ceiling() {
        let samples: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        let m = SurvivalModel::fit(&samples).unwrap();
        let n = 100.0f64;
        assert!((m.surprisal(0.0) + (n / (n + 1.0)).ln()).abs() < 1e-12);
        assert!(m.surprisal(0.0) < 0.01);
        assert!(m.surprisal(1e6) >= (n + 1.0).ln());
    }

    #[test]
    fn empirical_rank_matches_counts() {
        // far from the tail, survival is the smoothed rank
        let samples: Vec<f64> = (0..50).map(|i| (i / 5) as f64).collect();
        let m = SurvivalModel::fit(&samples).unwrap();
        for v in 0..9 {
            let greater = samples.iter().filter(|&&s| s > v as f64).count() as f64;
            assert!((m.survival(v as f64) - (greater + 1.0) / 51.0).abs() < 1e-12);
        }
        // frequent magnitudes are less surprising than rare ones
        assert!(m.surprisal(1.0) < m.surprisal(8.5));
    }

    #[test]
    fn degenerate_samples_still_score() {
        let m = SurvivalModel::fit(&[2.0; 60]).unwrap();
        assert!((m.survival(1.0) - 60.0 / 61.0).abs() < 1e-12);
        assert!((m.survival(2.0) - 1.0 / 61.0).abs() < 1e-12);
        assert!(m.surprisal(3.0).is_finite());
    }

    #[test]
    fn residual_score_rule() {
        let cat = EventCatalog::from_patterns(1, vec![vec![0.0, 0.0]]).unwrap();
        let m = SurvivalModel::fit(&(0..100).map(f64::from).collect::<Vec<_>>()).unwrap();
        let (p, n) = (cat.residual_plus, cat.residual_minus);
        assert_eq!(residual_score(n, n, &cat, Some(500.0), &m), 1.0);
        assert_eq!(residual_score(p, p, &cat, Some(500.0), &m), 1.0);
        assert_eq!(residual_score(n, p, &cat, Some(500.0), &m), 1.0);
        assert_eq!(residual_score(p, n, &cat, None, &m), 1.0);
        assert!(residual_score(p, n, &cat, Some(500.0), &m) >= 101f64.ln());
    }

    #[test]
    fn steps_are_owned_by_newest_window() {
        let spec = WindowSpec::new(4, 2).unwrap();
        let s = ScoreSeries {
            aggregation: Aggregation::Sum,
            spec,
            windows: (0..3)
                .map(|t| WindowScore {
                    t,
                    start: 2 * t,
                    forecast: vec![],
                    residual: vec![],
                    max: t as f64,
                    sum: 10.0 * t as f64,
                })
                .collect(),
        };
        // windows cover [0,4), [2,6), [4,8); step 8 trails
        assert_eq!(s.step_owners(9), vec![0, 0, 0, 0, 1, 1, 2, 2, 2]);
        assert_eq!(s.step_scores(4), vec![0.0; 4]);
    }

    proptest! {
        #[test]
        fn surprisal_is_monotone(mut xs in prop::collection::vec(0.0f64..10.0, 20..200), q in prop::collection::vec(0.0f64..20.0, 2..20)) {
            xs.iter_mut().for_each(|v| *v = (*v * 100.0).round() / 100.0);
            let m = SurvivalModel::fit(&xs).unwrap();
            let mut q = q;
            q.sort_by(f64::total_cmp);
            for w in q.windows(2) {
                let (a, b) = (m.surprisal(w[0]), m.surprisal(w[1]));
                prop_assert!(a >= 0.0);
                prop_assert!(a <= b + 1e-12, "{} -> {a}, {} -> {b}", w[0], w[1]);
            }
        }

        #[test]
        fn max_and_sum_bounds(ps in prop::collection::vec(0.0f64..100.0, 1..20)) {
            let (mx, sm) = (aggregate(&ps, Aggregation::Max), aggregate(&ps, Aggregation::Sum));
            prop_assert!(mx <= sm + 1e-9);
            prop_assert!(sm <= ps.len() as f64 * mx + 1e-9);
        }
    }
}
