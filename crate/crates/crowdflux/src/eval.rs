//! Detection evaluation: ROC sweeps, AUC, equal error rate, and the
//! pixel-coverage detection rate.
//!
//! Frame-level: a frame's score is the maximum reconstruction error over its
//! cells, and a frame is truly abnormal when its ground-truth mask contains
//! any abnormal pixel. Pixel-level: a truly abnormal frame counts as detected
//! at a threshold only when the flagged cells cover strictly more than the
//! coverage fraction of its truth pixels; false positives are normal frames
//! with any flagged cell. The detection rate RD is the pixel-criterion hit
//! rate at the frame-level equal-error threshold.

use std::io::{BufRead, Write};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("degenerate ground truth: {positives} positive and {negatives} negative frames")]
    EmptyTruth { positives: usize, negatives: usize },
    #[error("scores ({scores}) and truth ({truth}) cover different frame counts")]
    LengthMismatch { scores: usize, truth: usize },
    #[error("eval csv parse error at line {line}: {message}")]
    Csv { line: usize, message: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub points: Vec<RocPoint>,
    pub auc: f64,
    pub eer: f64,
    /// Threshold at the equal-error operating point.
    pub eer_threshold: f64,
    /// Pixel-level detection rate; absent for frame-level reports.
    pub rd: Option<f64>,
}

/// Sweep `score >= threshold` over all distinct scores (plus an all-negative
/// sentinel) and return ROC points ordered from (0,0) to (1,1).
pub fn roc(scores: &[f64], truth: &[bool]) -> Result<Vec<RocPoint>, EvalError> {
    if scores.len() != truth.len() {
        return Err(EvalError::LengthMismatch { scores: scores.len(), truth: truth.len() });
    }
    let positives = truth.iter().filter(|&&t| t).count();
    let negatives = truth.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(EvalError::EmptyTruth { positives, negatives });
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));

    let mut points = vec![RocPoint { threshold: f64::INFINITY, fpr: 0.0, tpr: 0.0 }];
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        // consume the whole tie group before emitting a point
        while i < order.len() && scores[order[i]] == t {
            if truth[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold: t,
            fpr: fp as f64 / negatives as f64,
            tpr: tp as f64 / positives as f64,
        });
    }
    Ok(points)
}

/// Area under the ROC by the trapezoid rule.
pub fn auc(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[0].tpr + w[1].tpr) / 2.0)
        .sum()
}

/// Equal error rate: the point where FPR = 1 - TPR, linearly interpolated
/// between the two straddling ROC points. Also returns the achievable
/// operating threshold: the straddling endpoint whose worst error rate
/// max(FPR, FNR) is smallest, ties to the higher threshold.
pub fn eer(points: &[RocPoint]) -> (f64, f64) {
    let diff = |p: &RocPoint| p.fpr - (1.0 - p.tpr);
    for w in points.windows(2) {
        let (d0, d1) = (diff(&w[0]), diff(&w[1]));
        if d0 <= 0.0 && d1 >= 0.0 {
            let denom = d1 - d0;
            let alpha = if denom.abs() < 1e-15 { 0.0 } else { -d0 / denom };
            let rate = w[0].fpr + alpha * (w[1].fpr - w[0].fpr);
            let worst = |p: &RocPoint| p.fpr.max(1.0 - p.tpr);
            let threshold =
                if worst(&w[1]) < worst(&w[0]) { w[1].threshold } else { w[0].threshold };
            return (rate, threshold);
        }
    }
    // the diff runs from -1 at (0,0) to +1 at (1,1), so a crossing always exists
    unreachable!("ROC endpoints guarantee an equal-error crossing");
}

/// Frame-level evaluation from per-frame scores and truth labels.
pub fn frame_level_eval(frame_scores: &[f64], frame_truth: &[bool]) -> Result<EvalReport, EvalError> {
    let points = roc(frame_scores, frame_truth)?;
    let (eer_value, eer_threshold) = eer(&points);
    Ok(EvalReport { auc: auc(&points), eer: eer_value, eer_threshold, rd: None, points })
}

/// Per-frame input of the pixel-level criterion.
#[derive(Debug, Clone)]
pub struct PixelFrame {
    /// Truly abnormal pixel count of the frame (0 = normal frame).
    pub truth_pixels: usize,
    /// Per-cell `(reconstruction error, truth pixels inside the cell)`.
    pub cells: Vec<(f64, usize)>,
}

/// Pixel-level evaluation under the strict coverage rule.
pub fn pixel_level_eval(
    frames: &[PixelFrame],
    coverage_threshold: f64,
) -> Result<EvalReport, EvalError> {
    // frame-level operating point for RD
    let frame_scores: Vec<f64> = frames
        .iter()
        .map(|f| f.cells.iter().map(|&(e, _)| e).fold(0.0f64, f64::max))
        .collect();
    let frame_truth: Vec<bool> = frames.iter().map(|f| f.truth_pixels > 0).collect();
    let frame_points = roc(&frame_scores, &frame_truth)?;
    let (_, operating_threshold) = eer(&frame_points);

    // per frame: cells sorted by error descending with truth prefix sums
    struct Prepared {
        truth_pixels: usize,
        errors: Vec<f64>,
        truth_prefix: Vec<usize>,
    }
    let prepared: Vec<Prepared> = frames
        .iter()
        .map(|f| {
            let mut cells = f.cells.clone();
            cells.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
            let mut truth_prefix = Vec::with_capacity(cells.len() + 1);
            truth_prefix.push(0usize);
            for &(_, t) in &cells {
                truth_prefix.push(truth_prefix.last().unwrap() + t);
            }
            Prepared {
                truth_pixels: f.truth_pixels,
                errors: cells.iter().map(|&(e, _)| e).collect(),
                truth_prefix,
            }
        })
        .collect();

    let detected = |p: &Prepared, threshold: f64| -> (bool, bool) {
        // cells are sorted descending; count those with error >= threshold
        let flagged = p.errors.partition_point(|&e| e >= threshold);
        let any = flagged > 0;
        let covered = p.truth_pixels > 0
            && (p.truth_prefix[flagged] as f64) > coverage_threshold * (p.truth_pixels as f64);
        (any, covered)
    };

    let positives = prepared.iter().filter(|p| p.truth_pixels > 0).count();
    let negatives = prepared.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(EvalError::EmptyTruth { positives, negatives });
    }

    let mut thresholds: Vec<f64> =
        prepared.iter().flat_map(|p| p.errors.iter().copied()).collect();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();

    let mut points = vec![RocPoint { threshold: f64::INFINITY, fpr: 0.0, tpr: 0.0 }];
    for t in thresholds {
        let mut tp = 0usize;
        let mut fp = 0usize;
        for p in &prepared {
            let (any, covered) = detected(p, t);
            if p.truth_pixels > 0 {
                tp += covered as usize;
            } else {
                fp += any as usize;
            }
        }
        points.push(RocPoint {
            threshold: t,
            fpr: fp as f64 / negatives as f64,
            tpr: tp as f64 / positives as f64,
        });
    }

    // monotone upper envelope is not guaranteed for the coverage criterion in
    // tpr, but fpr is nondecreasing as the threshold drops; keep sweep order.
    let (eer_value, eer_threshold) = eer(&points);
    let rd_hits = prepared
        .iter()
        .filter(|p| p.truth_pixels > 0 && detected(p, operating_threshold).1)
        .count();
    let rd = rd_hits as f64 / positives as f64;
    Ok(EvalReport { auc: auc(&points), eer: eer_value, eer_threshold, rd: Some(rd), points })
}

/// Write `threshold,fpr,tpr` rows plus the `# auc=.. eer=.. rd=..` trailer.
pub fn write_eval_csv<W: Write>(out: &mut W, report: &EvalReport) -> std::io::Result<()> {
    writeln!(out, "threshold,fpr,tpr")?;
    for p in &report.points {
        writeln!(out, "{},{},{}", p.threshold, p.fpr, p.tpr)?;
    }
    writeln!(
        out,
        "# auc={} eer={} rd={}",
        report.auc,
        report.eer,
        report.rd.map(|v| v.to_string()).unwrap_or_else(|| "nan".into())
    )?;
    Ok(())
}

/// Read back an eval CSV written by [`write_eval_csv`].
pub fn read_eval_csv<R: BufRead>(input: R) -> Result<EvalReport, EvalError> {
    let mut points = Vec::new();
    let mut auc_value = f64::NAN;
    let mut eer_value = f64::NAN;
    let mut rd = None;
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        let err = |m: String| EvalError::Csv { line: idx + 1, message: m };
        if idx == 0 || line.trim().is_empty() {
            continue;
        }
        if let Some(trailer) = line.strip_prefix('#') {
            for part in trailer.split_whitespace() {
                let (key, value) = part
                    .split_once('=')
                    .ok_or_else(|| err(format!("bad trailer field `{part}`")))?;
                let value: f64 =
                    value.parse().map_err(|_| err(format!("bad trailer value `{value}`")))?;
                match key {
                    "auc" => auc_value = value,
                    "eer" => eer_value = value,
                    "rd" => rd = if value.is_nan() { None } else { Some(value) },
                    _ => return Err(err(format!("unknown trailer key `{key}`"))),
                }
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(err(format!("expected 3 fields, got {}", fields.len())));
        }
        let parse = |s: &str| s.parse::<f64>().map_err(|_| err(format!("bad number `{s}`")));
        points.push(RocPoint {
            threshold: parse(fields[0])?,
            fpr: parse(fields[1])?,
            tpr: parse(fields[2])?,
        });
    }
    let eer_threshold = f64::NAN;
    Ok(EvalReport { points, auc: auc_value, eer: eer_value, eer_threshold, rd })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_separation() {
        let scores = vec![0.1, 0.2, 0.9, 0.8];
        let truth = vec![false, false, true, true];
        let report = frame_level_eval(&scores, &truth).unwrap();
        assert!((report.auc - 1.0).abs() < 1e-12);
        assert!(report.eer.abs() < 1e-12);
    }

    #[test]
    fn constant_scores_are_chance() {
        let scores = vec![0.5; 10];
        let truth: Vec<bool> = (0..10).map(|i| i % 2 == 0).collect();
        let report = frame_level_eval(&scores, &truth).unwrap();
        assert!((report.auc - 0.5).abs() < 1e-12);
        assert!((report.eer - 0.5).abs() < 1e-12);
    }

    #[test]
    fn endpoints_and_monotonicity() {
        let scores = vec![0.3, 0.7, 0.2, 0.9, 0.5, 0.1];
        let truth = vec![false, true, false, true, true, false];
        let points = roc(&scores, &truth).unwrap();
        assert_eq!((points[0].fpr, points[0].tpr), (0.0, 0.0));
        let last = points.last().unwrap();
        assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
        for w in points.windows(2) {
            assert!(w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr);
        }
    }

    #[test]
    fn empty_truth_rejected() {
        assert!(matches!(
            frame_level_eval(&[0.1, 0.2], &[false, false]),
            Err(EvalError::EmptyTruth { positives: 0, .. })
        ));
        assert!(matches!(
            frame_level_eval(&[0.1, 0.2], &[true, true]),
            Err(EvalError::EmptyTruth { negatives: 0, .. })
        ));
    }

    #[test]
    fn auc_permutation_invariant() {
        let scores = vec![0.3, 0.7, 0.2, 0.9, 0.5, 0.1];
        let truth = vec![false, true, false, true, true, false];
        let r1 = frame_level_eval(&scores, &truth).unwrap();
        let perm = [5, 3, 1, 0, 4, 2];
        let ps: Vec<f64> = perm.iter().map(|&i| scores[i]).collect();
        let pt: Vec<bool> = perm.iter().map(|&i| truth[i]).collect();
        let r2 = frame_level_eval(&ps, &pt).unwrap();
        assert_eq!(r1.auc, r2.auc);
        assert_eq!(r1.eer, r2.eer);
    }

    fn pixel_frame(truth: usize, cells: Vec<(f64, usize)>) -> PixelFrame {
        PixelFrame { truth_pixels: truth, cells }
    }

    #[test]
    fn coverage_rule_is_strict() {
        // abnormal frame with 100 truth pixels split over two cells
        let frames = vec![
            // detected cell covers exactly 39% -> not a detection at 0.40
            pixel_frame(100, vec![(1.0, 39), (0.0, 61)]),
            // detected cell covers all truth -> detection
            pixel_frame(100, vec![(1.0, 100), (0.0, 0)]),
            pixel_frame(0, vec![(0.0, 0), (0.0, 0)]),
            pixel_frame(0, vec![(0.0, 0), (0.0, 0)]),
        ];
        let report = pixel_level_eval(&frames, 0.40).unwrap();
        // at the frame-level EER threshold (1.0), only the fully covered frame hits
        assert_eq!(report.rd, Some(0.5));

        // exactly 40% is still not "more than 40%"
        let frames = vec![
            pixel_frame(100, vec![(1.0, 40), (0.0, 60)]),
            pixel_frame(0, vec![(0.0, 0)]),
        ];
        let report = pixel_level_eval(&frames, 0.40).unwrap();
        assert_eq!(report.rd, Some(0.0));
    }

    #[test]
    fn eval_csv_roundtrip() {
        let report = frame_level_eval(&[0.1, 0.9, 0.3, 0.8], &[false, true, false, true]).unwrap();
        let mut buf = Vec::new();
        write_eval_csv(&mut buf, &report).unwrap();
        let back = read_eval_csv(std::io::BufReader::new(&buf[..])).unwrap();
        assert_eq!(back.points, report.points);
        assert_eq!(back.auc, report.auc);
        assert_eq!(back.eer, report.eer);
        assert_eq!(back.rd, report.rd);
    }
}
