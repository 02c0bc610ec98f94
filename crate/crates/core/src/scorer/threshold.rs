//! NK threshold calibration: predict NK iff the top score is below `tau`.

use std::fmt;

/// One dev question as seen by the tuner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdPoint {
    /// Top candidate score; `None` when the pool was empty (always NK).
    pub score: Option<f64>,
    /// Metric credit when the top candidate is kept.
    pub gain_answer: f64,
    /// Metric credit when the question is answered NK.
    pub gain_abstain: f64,
}

impl ThresholdPoint {
    /// Keeping the top candidate is right iff `is_gold_valid`.
    pub fn binary(score: f64, is_gold_valid: bool) -> Self {
        let (a, b) = if is_gold_valid {
            (1.0, 0.0)
        } else {
            (0.0, 1.0)
        };
        ThresholdPoint {
            score: Some(score),
            gain_answer: a,
            gain_abstain: b,
        }
    }

    /// Credit at threshold `tau`.
    pub fn gain_at(&self, tau: f64) -> f64 {
        match self.score {
            Some(s) if s >= tau => self.gain_answer,
            _ => self.gain_abstain,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Threshold {
    pub tau: f64,
    pub tuned_metric: String,
    pub tuned_value: f64,
}

impl Threshold {
    pub fn fixed(tau: f64) -> Self {
        Threshold {
            tau,
            tuned_metric: "fixed".into(),
            tuned_value: f64::NAN,
        }
    }

    pub fn predicts_nk(&self, top_score: Option<f64>) -> bool {
        top_score.is_none_or(|s| s < self.tau)
    }
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "tau={} {}={}",
            self.tau, self.tuned_metric, self.tuned_value
        )
    }
}

/// Mean credit at `tau`.
pub fn metric_at(points: &[ThresholdPoint], tau: f64) -> f64 {
    points.iter().map(|p| p.gain_at(tau)).sum::<f64>() / points.len() as f64
}

/// Sweeps midpoints between adjacent distinct scores plus the infinite
/// sentinels; ties go to the largest tau. Returns `None` on empty input.
pub fn tune_threshold(points: &[ThresholdPoint], metric: &str) -> Option<Threshold> {
    if points.is_empty() {
        return None;
    }
    let mut scored: Vec<&ThresholdPoint> = points.iter().filter(|p| p.score.is_some()).collect();
    scored.sort_by(|a, b| a.score.unwrap().total_cmp(&b.score.unwrap()));
    let fixed: f64 = points
        .iter()
        .filter(|p| p.score.is_none())
        .map(|p| p.gain_abstain)
        .sum();

    // Candidate k puts the k lowest-scored points below tau.
    let n = scored.len();
    let mut abstain_prefix = vec![0.0; n + 1];
    let mut answer_suffix = vec![0.0; n + 1];
    for i in 0..n {
        abstain_prefix[i + 1] = abstain_prefix[i] + scored[i].gain_abstain;
    }
    for i in (0..n).rev() {
        answer_suffix[i] = answer_suffix[i + 1] + scored[i].gain_answer;
    }

    let total = points.len() as f64;
    let mut best: Option<(f64, f64)> = None;
    for k in 0..=n {
        let tau = if k == 0 {
            f64::NEG_INFINITY
        } else if k == n {
            f64::INFINITY
        } else {
            let (lo, hi) = (scored[k - 1].score.unwrap(), scored[k].score.unwrap());
            if lo == hi {
                continue;
            }
            let mid = lo + (hi - lo) / 2.0;
            // adjacent floats: `hi` itself still separates the two groups
            if mid > lo {
                mid
            } else {
                hi
            }
        };
        let value = (fixed + abstain_prefix[k] + answer_suffix[k]) / total;
        if best.is_none_or(|(v, _)| value >= v) {
            best = Some((value, tau));
        }
    }
    let (_, tau) = best.expect("k = 0 is always a candidate");
    // Re-evaluate at the chosen tau so the reported value is exactly the metric there.
    Some(Threshold {
        tau,
        tuned_metric: metric.to_string(),
        tuned_value: metric_at(points, tau),
    })
}
