//! Pose-error metrics and benchmark aggregation: per-query rotation and
//! translation errors, medians over localized queries, and the share of
//! queries under each accuracy threshold.

use serde::Serialize;

use crate::types::Pose;

/// Error of one pose estimate against ground truth. Translation is the
/// distance between camera centers, in scene units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PoseError {
    /// Geodesic rotation angle in degrees, in `[0, 180]`.
    pub rotation_deg: f64,
    pub translation: f64,
}

/// Rotation and translation error between two world-to-camera poses.
///
/// Rotation is the angle of `R_est * R_gt^T`; translation compares camera
/// centers `C = -R^T t` rather than raw `t` vectors, because
/// world-to-camera translations are rotation-coupled.
pub fn pose_error(estimate: &Pose, ground_truth: &Pose) -> PoseError {
    let rel = estimate.rotation_matrix() * ground_truth.rotation_matrix().transpose();
    let cos = ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let rotation_deg = cos.acos().to_degrees();
    let translation = (estimate.camera_center() - ground_truth.camera_center()).norm();
    PoseError {
        rotation_deg,
        translation,
    }
}

/// Accuracy thresholds: a query counts toward a pair when its translation
/// error is at most `max_translation` AND its rotation error at most
/// `max_rotation_deg`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdSpec {
    /// `(max_translation, max_rotation_deg)` pairs, sorted ascending.
    pub pairs: Vec<(f64, f64)>,
}

impl Default for ThresholdSpec {
    fn default() -> Self {
        Self {
            pairs: vec![(0.25, 2.0), (0.5, 5.0), (5.0, 10.0)],
        }
    }
}

impl ThresholdSpec {
    pub fn new(pairs: Vec<(f64, f64)>) -> Self {
        assert!(!pairs.is_empty(), "at least one threshold pair");
        for w in pairs.windows(2) {
            assert!(
                w[0].0 <= w[1].0 && w[0].1 <= w[1].1,
                "threshold pairs must be sorted ascending"
            );
        }
        assert!(
            pairs.iter().all(|&(t, r)| t > 0.0 && r > 0.0),
            "thresholds must be positive"
        );
        Self { pairs }
    }
}

impl std::str::FromStr for ThresholdSpec {
    type Err = String;

    /// Parse `"0.25:2,0.5:5,5:10"`.
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let mut pairs = Vec::new();
        for part in s.split(',') {
            let (t, r) = part
                .split_once(':')
                .ok_or_else(|| format!("expected `translation:rotation`, got `{part}`"))?;
            let t: f64 = t.trim().parse().map_err(|e| format!("bad translation in `{part}`: {e}"))?;
            let r: f64 = r.trim().parse().map_err(|e| format!("bad rotation in `{part}`: {e}"))?;
            pairs.push((t, r));
        }
        if pairs.is_empty() {
            return Err("empty threshold list".into());
        }
        for w in pairs.windows(2) {
            if !(w[0].0 <= w[1].0 && w[0].1 <= w[1].1) {
                return Err("threshold pairs must be sorted ascending".into());
            }
        }
        if !pairs.iter().all(|&(t, r)| t > 0.0 && r > 0.0) {
            return Err("thresholds must be positive".into());
        }
        Ok(Self { pairs })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThresholdResult {
    pub max_translation: f64,
    pub max_rotation_deg: f64,
    /// Percent of ALL queries (failures included in the denominator).
    pub percent: f64,
}

/// Aggregated benchmark results.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub total_queries: usize,
    pub localized: usize,
    /// `(total - localized) / total`; 0 for an empty query set.
    pub failure_rate: f64,
    /// Median over localized queries only; absent when none localized.
    pub median_rotation_deg: Option<f64>,
    pub median_translation: Option<f64>,
    pub thresholds: Vec<ThresholdResult>,
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    })
}

/// Aggregate per-query errors (`None` marks a failed localization).
///
/// Failed queries count against every threshold (they stay in the
/// denominator) but are excluded from the medians; the failure rate is
/// reported separately.
pub fn aggregate(errors: &[Option<PoseError>], thresholds: &ThresholdSpec) -> EvalReport {
    let total = errors.len();
    let mut rot = Vec::new();
    let mut trans = Vec::new();
    for e in errors.iter().flatten() {
        rot.push(e.rotation_deg);
        trans.push(e.translation);
    }
    let localized = rot.len();
    let threshold_results = thresholds
        .pairs
        .iter()
        .map(|&(mt, mr)| {
            let hits = errors
                .iter()
                .flatten()
                .filter(|e| e.translation <= mt && e.rotation_deg <= mr)
                .count();
            ThresholdResult {
                max_translation: mt,
                max_rotation_deg: mr,
                percent: if total == 0 {
                    0.0
                } else {
                    100.0 * hits as f64 / total as f64
                },
            }
        })
        .collect();
    EvalReport {
        total_queries: total,
        localized,
        failure_rate: if total == 0 {
            0.0
        } else {
            (total - localized) as f64 / total as f64
        },
        median_rotation_deg: median(&mut rot),
        median_translation: median(&mut trans),
        thresholds: threshold_results,
    }
}

impl EvalReport {
    /// Aligned text table for terminal output.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let fmt_opt = |v: Option<f64>| match v {
            Some(x) => format!("{x:.6}"),
            None => "-".to_string(),
        };
        s.push_str(&format!("{:<26}{}\n", "queries", self.total_queries));
        s.push_str(&format!(
            "{:<26}{} ({:.1}%)\n",
            "localized",
            self.localized,
            100.0 * (1.0 - self.failure_rate)
        ));
        s.push_str(&format!(
            "{:<26}{:.1}%\n",
            "failure rate",
            100.0 * self.failure_rate
        ));
        s.push_str(&format!(
            "{:<26}{}\n",
            "median rotation (deg)",
            fmt_opt(self.median_rotation_deg)
        ));
        s.push_str(&format!(
            "{:<26}{}\n",
            "median translation",
            fmt_opt(self.median_translation)
        ));
        for t in &self.thresholds {
            s.push_str(&format!(
                "{:<26}{:.1}%\n",
                format!("<= {}u / {} deg", t.max_translation, t.max_rotation_deg),
                t.percent
            ));
        }
        s
    }

    /// CSV header matching [`EvalReport::csv_row`]; one percentage column
    /// per threshold pair.
    pub fn csv_header(&self) -> String {
        let mut cols = vec![
            "label".to_string(),
            "queries".to_string(),
            "localized".to_string(),
            "failure_rate".to_string(),
            "median_rotation_deg".to_string(),
            "median_translation".to_string(),
        ];
        for t in &self.thresholds {
            cols.push(format!("pct_{}u_{}deg", t.max_translation, t.max_rotation_deg));
        }
        cols.join(",")
    }

    /// One CSV row, labeled (e.g. with the λ value of an ablation run).
    pub fn csv_row(&self, label: &str) -> String {
        let fmt_opt = |v: Option<f64>| match v {
            Some(x) => format!("{x:.9}"),
            None => String::new(),
        };
        let mut cols = vec![
            label.to_string(),
            self.total_queries.to_string(),
            self.localized.to_string(),
            format!("{:.9}", self.failure_rate),
            fmt_opt(self.median_rotation_deg),
            fmt_opt(self.median_translation),
        ];
        for t in &self.thresholds {
            cols.push(format!("{:.4}", t.percent));
        }
        cols.join(",")
    }
}
