//! Point-adjusted precision, recall and F1, and the best-F1 threshold sweep.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::LabelSeries;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn from_predictions(pred: &[u8], labels: &[u8]) -> Self {
        let mut c = Confusion::default();
        for (&p, &l) in pred.iter().zip(labels) {
            match (p != 0, l != 0) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }

    /// (precision, recall, F1); each ratio is 0 when its denominator is.
    pub fn scores(&self) -> (f64, f64, f64) {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let p = ratio(self.tp, self.tp + self.fp);
        let r = ratio(self.tp, self.tp + self.fn_);
        let f = if p + r > 0.0 {
            2.0 * p * r / (p + r)
        } else {
            0.0
        };
        (p, r, f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub threshold: f64,
    pub n_segments: usize,
    pub n_detected: usize,
    pub detected: Vec<bool>,
    pub confusion: Confusion,
}

#[derive(Serialize)]
struct Metrics {
    precision: f64,
    recall: f64,
    f1: f64,
    threshold: f64,
    n_segments: usize,
    n_detected: usize,
}

impl EvalReport {
    /// `{precision, recall, f1, threshold, n_segments, n_detected}`.
    pub fn metrics_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&Metrics {
            precision: self.precision,
            recall: self.recall,
            f1: self.f1,
            threshold: self.threshold,
            n_segments: self.n_segments,
            n_detected: self.n_detected,
        })?)
    }
}

fn check_len(scores: &[f64], labels: &LabelSeries) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidParam("NaN score".into()));
    }
    Ok(())
}

/// Extends any hit inside a labelled segment to the whole segment.
pub fn adjust(raw: &[u8], labels: &LabelSeries) -> Vec<u8> {
    let mut out = raw.to_vec();
    for (s, e) in labels.segments() {
        if raw[s..e].iter().any(|&p| p != 0) {
            out[s..e].iter_mut().for_each(|p| *p = 1);
        }
    }
    out
}

/// Raw predictions `score > threshold`, then segment adjustment.
pub fn point_adjust(scores: &[f64], labels: &LabelSeries, threshold: f64) -> Result<Vec<u8>> {
    check_len(scores, labels)?;
    let raw: Vec<u8> = scores.iter().map(|&s| u8::from(s > threshold)).collect();
    Ok(adjust(&raw, labels))
}

pub fn evaluate(scores: &[f64], labels: &LabelSeries, threshold: f64) -> Result<EvalReport> {
    let pred = point_adjust(scores, labels, threshold)?;
    let segments = labels.segments();
    let detected: Vec<bool> = segments.iter().map(|&(s, _)| pred[s] == 1).collect();
    let confusion = Confusion::from_predictions(&pred, labels.flags());
    let (precision, recall, f1) = confusion.scores();
    Ok(EvalReport {
        precision,
        recall,
        f1,
        threshold,
        n_segments: segments.len(),
        n_detected: detected.iter().filter(|d| **d).count(),
        detected,
        confusion,
    })
}

/// Threshold candidates: just below the minimum, then every distinct score.
pub fn candidate_thresholds(scores: &[f64]) -> Vec<f64> {
    let mut v = scores.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    if let Some(&lo) = v.first() {
        v.insert(0, lo - lo.abs().max(1.0) * 1e-9);
    }
    v
}

/// Sweeps every candidate threshold and keeps the best F1; ties go to the
/// lower threshold.
pub fn best_f1(scores: &[f64], labels: &LabelSeries) -> Result<EvalReport> {
    check_len(scores, labels)?;
    let segments = labels.segments();
    if segments.is_empty() {
        return Err(Error::InvalidParam(
            "best-F1 sweep needs at least one anomaly segment".into(),
        ));
    }
    if scores.is_empty() {
        return Err(Error::Empty("no scores".into()));
    }
    let flags = labels.flags();
    let mut normal: Vec<f64> = scores
        .iter()
        .zip(flags)
        .filter(|(_, &l)| l == 0)
        .map(|(&s, _)| s)
        .collect();
    normal.sort_by(f64::total_cmp);
    // (segment max, segment length), sorted by max
    let mut seg: Vec<(f64, usize)> = segments
        .iter()
        .map(|&(s, e)| {
            (
                scores[s..e]
                    .iter()
                    .copied()
                    .fold(f64::NEG_INFINITY, f64::max),
                e - s,
            )
        })
        .collect();
    seg.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut suffix = vec![0usize; seg.len() + 1];
    for i in (0..seg.len()).rev() {
        suffix[i] = suffix[i + 1] + seg[i].1;
    }
    let positives = suffix[0];

    let mut best: Option<(f64, f64)> = None;
    for th in candidate_thresholds(scores) {
        let fp = normal.len() - normal.partition_point(|&v| v <= th);
        let first = seg.partition_point(|s| s.0 <= th);
        let tp = suffix[first];
        let c = Confusion {
            tp,
            fp,
            fn_: positives - tp,
            tn: 0,
        };
        let f = c.scores().2;
        if best.is_none_or(|(bf, _)| f > bf) {
            best = Some((f, th));
        }
    }
    let (_, th) = best.expect("at least one candidate");
    evaluate(scores, labels, th)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn labels(v: &[u8]) -> LabelSeries {
        LabelSeries::new(v.to_vec()).unwrap()
    }

    #[test]
    fn hand_traced_adjustment() {
        let l = labels(&[0, 1, 1, 0]);
        let pred = adjust(&[0, 1, 0, 0], &l);
        assert_eq!(pred, vec![0, 1, 1, 0]);
        let (p, r, f) = Confusion::from_predictions(&pred, l.flags()).scores();
        assert_eq!((p, r, f), (1.0, 1.0, 1.0));
    }

    #[test]
    fn no_positives_gives_zero() {
        let l = labels(&[0, 0, 0]);
        let r = evaluate(&[0.0; 3], &l, 0.5).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn outside_hits_stay_false_positives() {
        let l = labels(&[0, 1, 1, 0, 0]);
        let r = evaluate(&[0.0, 0.0, 0.0, 0.0, 1.0], &l, 0.5).unwrap();
        assert_eq!(r.recall, 0.0);
        assert_eq!(r.confusion.fp, 1);
    }

    #[test]
    fn separating_scores_reach_one() {
        let l = labels(&[0, 0, 1, 1, 0, 1]);
        let scores: Vec<f64> = l.flags().iter().map(|&v| v as f64).collect();
        assert_eq!(best_f1(&scores, &l).unwrap().f1, 1.0);
        let shifted: Vec<f64> = scores.iter().map(|v| v * 3.0 + 0.5).collect();
        assert_eq!(evaluate(&shifted, &l, 2.0).unwrap().f1, 1.0);
    }

    #[test]
    fn length_mismatch_is_error() {
        assert!(point_adjust(&[0.0], &labels(&[0, 1]), 0.5).is_err());
    }

    #[test]
    fn constant_scores_single_evaluation() {
        let l = labels(&[0, 1, 0]);
        let r = best_f1(&[2.0; 3], &l).unwrap();
        assert!(r.threshold < 2.0);
        assert_eq!(r.recall, 1.0);
    }

    fn quadratic_best(scores: &[f64], l: &LabelSeries) -> (f64, f64) {
        let mut best = (-1.0, f64::NAN);
        for th in candidate_thresholds(scores) {
            let f = evaluate(scores, l, th).unwrap().f1;
            if f > best.0 {
                best = (f, th);
            }
        }
        best
    }

    #[test]
    fn sweep_matches_quadratic_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let n = rng.random_range(50..400);
            let mut flags = vec![0u8; n];
            for _ in 0..rng.random_range(1..5) {
                let s = rng.random_range(0..n - 5);
                let len = rng.random_range(1..5);
                flags[s..s + len].iter_mut().for_each(|f| *f = 1);
            }
            let l = labels(&flags);
            let scores: Vec<f64> = (0..n)
                .map(|_| (rng.random::<f64>() * 20.0).floor())
                .collect();
            let fast = best_f1(&scores, &l).unwrap();
            let (f, th) = quadratic_best(&scores, &l);
            assert_eq!(fast.f1, f);
            assert_eq!(fast.threshold, th);
        }
    }

    proptest! {
        #[test]
        fn adjustment_is_idempotent(raw in prop::collection::vec(0u8..2, 1..80), flags in prop::collection::vec(0u8..2, 80)) {
            let l = labels(&flags[..raw.len()]);
            let once = adjust(&raw, &l);
            prop_assert_eq!(adjust(&once, &l), once);
        }

        #[test]
        fn adjustment_dominates_raw(scores in prop::collection::vec(0.0f64..1.0, 1..80), flags in prop::collection::vec(0u8..2, 80), th in 0.0f64..1.0) {
            let l = labels(&flags[..scores.len()]);
            let raw: Vec<u8> = scores.iter().map(|&s| u8::from(s > th)).collect();
            let (rp, rr, _) = Confusion::from_predictions(&raw, l.flags()).scores();
            let (ap, ar, _) = Confusion::from_predictions(&point_adjust(&scores, &l, th).unwrap(), l.flags()).scores();
            prop_assert!(ap >= rp);
            prop_assert!(ar >= rr);
        }

        #[test]
        fn best_is_at_least_any_threshold(scores in prop::collection::vec(0.0f64..1.0, 2..60), flags in prop::collection::vec(0u8..2, 60), th in 0.0f64..1.0) {
            let mut flags = flags[..scores.len()].to_vec();
            flags[0] = 1;
            let l = labels(&flags);
            let best = best_f1(&scores, &l).unwrap().f1;
            prop_assert!(best >= evaluate(&scores, &l, th).unwrap().f1);
        }
    }
}
