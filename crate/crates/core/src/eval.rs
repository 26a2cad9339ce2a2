//! Equal error rate computation, DET operating points, and cross-dataset
//! averaging.
//!
//! Scores are oriented higher = more bona fide throughout. The acceptance
//! convention is `score >= threshold`, mirrored exactly by the brute-force
//! oracle in the test suite: a spoof trial scored exactly at the threshold
//! counts as falsely accepted.

use std::collections::HashSet;

use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum EvalError {
    #[error("score set needs at least one {0} trial")]
    MissingClass(&'static str),
    #[error("duplicate utterance id {0}")]
    DuplicateId(String),
    #[error("cannot average an empty list of error rates")]
    EmptyList,
}

/// Trial class label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Bonafide,
    Spoof,
}

impl Label {
    /// Class index used by the loss (bonafide first).
    pub fn class_index(self) -> usize {
        match self {
            Label::Bonafide => 0,
            Label::Spoof => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Bonafide => "bonafide",
            Label::Spoof => "spoof",
        }
    }
}

/// One scored trial.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub utterance_id: String,
    pub label: Label,
    pub score: f64,
}

/// A set of scored trials with unique utterance ids.
#[derive(Debug, Clone, Default)]
pub struct ScoreSet {
    records: Vec<ScoreRecord>,
}

impl ScoreSet {
    pub fn new(records: Vec<ScoreRecord>) -> Result<Self, EvalError> {
        let mut seen = HashSet::new();
        for r in &records {
            if !seen.insert(r.utterance_id.clone()) {
                return Err(EvalError::DuplicateId(r.utterance_id.clone()));
            }
        }
        Ok(Self { records })
    }

    pub fn records(&self) -> &[ScoreRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn split_scores(&self) -> Result<(Vec<f64>, Vec<f64>), EvalError> {
        let bona: Vec<f64> = self
            .records
            .iter()
            .filter(|r| r.label == Label::Bonafide)
            .map(|r| r.score)
            .collect();
        let spoof: Vec<f64> = self
            .records
            .iter()
            .filter(|r| r.label == Label::Spoof)
            .map(|r| r.score)
            .collect();
        if bona.is_empty() {
            return Err(EvalError::MissingClass("bonafide"));
        }
        if spoof.is_empty() {
            return Err(EvalError::MissingClass("spoof"));
        }
        Ok((bona, spoof))
    }
}

/// One DET operating point: false-acceptance and false-rejection rates at
/// a threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetPoint {
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
}

fn operating_point(threshold: f64, bona: &[f64], spoof: &[f64]) -> DetPoint {
    let accepted_spoof = spoof.iter().filter(|&&s| s >= threshold).count();
    let rejected_bona = bona.iter().filter(|&&s| s < threshold).count();
    DetPoint {
        threshold,
        far: accepted_spoof as f64 / spoof.len() as f64,
        frr: rejected_bona as f64 / bona.len() as f64,
    }
}

fn distinct_thresholds(bona: &[f64], spoof: &[f64]) -> Vec<f64> {
    let mut ts: Vec<f64> = bona.iter().chain(spoof.iter()).cloned().collect();
    ts.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
    ts.dedup();
    ts
}

/// DET operating points at every distinct score threshold, in ascending
/// threshold order. FAR is non-increasing and FRR non-decreasing along the
/// returned sequence.
pub fn det_points(scores: &ScoreSet) -> Result<Vec<DetPoint>, EvalError> {
    let (bona, spoof) = scores.split_scores()?;
    Ok(distinct_thresholds(&bona, &spoof)
        .into_iter()
        .map(|t| operating_point(t, &bona, &spoof))
        .collect())
}

/// Find the FAR = FRR crossing along a DET polyline, interpolating linearly
/// between the bracketing points where FAR − FRR changes sign.
fn polyline_crossing(points: &[DetPoint]) -> f64 {
    for (k, p) in points.iter().enumerate() {
        let diff = p.far - p.frr;
        if diff <= 0.0 {
            if diff == 0.0 || k == 0 {
                return p.far;
            }
            let prev = &points[k - 1];
            let d1 = prev.far - prev.frr;
            let d2 = diff;
            let s = d1 / (d1 - d2);
            return prev.far + s * (p.far - prev.far);
        }
    }
    // FAR stays above FRR across all finite thresholds; the virtual
    // all-reject end point (FAR 0, FRR 1) provides the crossing
    let last = points.last().expect("non-empty point list");
    let d1 = last.far - last.frr;
    let d2 = 0.0 - 1.0;
    let s = d1 / (d1 - d2);
    last.far + s * (0.0 - last.far)
}

/// Equal error rate in [0,1]: the rate at which false acceptances equal
/// false rejections, swept over all distinct score thresholds with linear
/// interpolation at the sign change.
pub fn compute_eer(scores: &ScoreSet) -> Result<f64, EvalError> {
    let points = det_points(scores)?;
    Ok(polyline_crossing(&points))
}

/// Arithmetic mean of per-dataset error rates.
pub fn average_eer(eers: &[f64]) -> Result<f64, EvalError> {
    if eers.is_empty() {
        return Err(EvalError::EmptyList);
    }
    Ok(eers.iter().sum::<f64>() / eers.len() as f64)
}

// ── CSV export ───────────────────────────────────────────────────────

/// Two-column CSV of DET operating points for external plotting.
pub fn det_csv(points: &[DetPoint]) -> String {
    let mut out = String::from("far,frr\n");
    for p in points {
        out.push_str(&format!("{},{}\n", p.far, p.frr));
    }
    out
}

/// EER summary table: one row per system/configuration, one column per
/// dataset plus the average.
pub fn eer_report_csv(dataset_names: &[String], rows: &[(String, Vec<f64>)]) -> String {
    let mut out = String::from("system");
    for name in dataset_names {
        out.push_str(&format!(",{name}"));
    }
    out.push_str(",avg\n");
    for (label, eers) in rows {
        out.push_str(label);
        for e in eers {
            out.push_str(&format!(",{e}"));
        }
        let avg = average_eer(eers).unwrap_or(f64::NAN);
        out.push_str(&format!(",{avg}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(bona: &[f64], spoof: &[f64]) -> ScoreSet {
        let mut records = Vec::new();
        for (i, &s) in bona.iter().enumerate() {
            records.push(ScoreRecord {
                utterance_id: format!("b{i}"),
                label: Label::Bonafide,
                score: s,
            });
        }
        for (i, &s) in spoof.iter().enumerate() {
            records.push(ScoreRecord {
                utterance_id: format!("s{i}"),
                label: Label::Spoof,
                score: s,
            });
        }
        ScoreSet::new(records).unwrap()
    }

    #[test]
    fn perfect_separation_gives_zero() {
        assert_eq!(compute_eer(&set(&[1.0], &[0.0])).unwrap(), 0.0);
    }

    #[test]
    fn total_inversion_gives_one() {
        assert_eq!(compute_eer(&set(&[0.0], &[1.0])).unwrap(), 1.0);
    }

    #[test]
    fn hand_case_one_third() {
        let eer = compute_eer(&set(&[0.9, 0.8, 0.3], &[0.7, 0.2, 0.1])).unwrap();
        assert_eq!(eer, 1.0 / 3.0);
    }

    #[test]
    fn missing_class_is_rejected() {
        let s = set(&[1.0], &[0.0]);
        let only_bona = ScoreSet::new(
            s.records()
                .iter()
                .filter(|r| r.label == Label::Bonafide)
                .cloned()
                .collect(),
        )
        .unwrap();
        assert!(matches!(
            compute_eer(&only_bona),
            Err(EvalError::MissingClass("spoof"))
        ));
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let records = vec![
            ScoreRecord {
                utterance_id: "x".into(),
                label: Label::Bonafide,
                score: 1.0,
            },
            ScoreRecord {
                utterance_id: "x".into(),
                label: Label::Spoof,
                score: 0.0,
            },
        ];
        assert!(matches!(
            ScoreSet::new(records),
            Err(EvalError::DuplicateId(_))
        ));
    }

    #[test]
    fn det_points_are_monotone_and_contain_origin_when_separated() {
        let pts = det_points(&set(&[1.0], &[0.0])).unwrap();
        assert!(pts.iter().any(|p| p.far == 0.0 && p.frr == 0.0));
        for w in pts.windows(2) {
            assert!(w[1].far <= w[0].far);
            assert!(w[1].frr >= w[0].frr);
        }
    }

    #[test]
    fn eer_invariant_under_increasing_transform() {
        let bona = [0.1, 0.4, 0.35, 0.8];
        let spoof = [0.05, 0.3, 0.45, 0.2];
        let base = compute_eer(&set(&bona, &spoof)).unwrap();
        let f = |x: f64| (3.0 * x).exp() + 2.0 * x;
        let mapped = compute_eer(&set(
            &bona.map(f),
            &spoof.map(f),
        ))
        .unwrap();
        assert_eq!(base, mapped);
    }

    #[test]
    fn label_swap_complements_eer_on_tie_free_sets() {
        let bona = [0.9, 0.8, 0.3];
        let spoof = [0.7, 0.2, 0.1];
        let eer = compute_eer(&set(&bona, &spoof)).unwrap();
        let swapped = compute_eer(&set(&spoof, &bona)).unwrap();
        assert!((swapped - (1.0 - eer)).abs() < 1e-12);
    }

    #[test]
    fn average_is_arithmetic_mean() {
        // per-dataset rates from a three-way evaluation, in percent
        let avg = average_eer(&[0.65, 3.50, 3.19]).unwrap();
        assert!((avg - 2.446_666_666_666_667).abs() < 1e-12);
        assert_eq!(average_eer(&[0.2]).unwrap(), 0.2);
        assert!((average_eer(&[0.4, 0.4, 0.4]).unwrap() - 0.4).abs() < 1e-15);
        assert!(matches!(average_eer(&[]), Err(EvalError::EmptyList)));
    }

    #[test]
    fn report_csv_shape() {
        let csv = eer_report_csv(
            &["eval_a".into(), "eval_b".into()],
            &[("attm-recurrent".into(), vec![0.01, 0.02])],
        );
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "system,eval_a,eval_b,avg");
        let row = lines.next().unwrap();
        assert!(row.starts_with("attm-recurrent,0.01,0.02,"));
    }
}
