use serde::{Deserialize, Serialize};

use super::{MatchResult, MetricsError};
use crate::taxonomy::Taxonomy;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl ClassCounts {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// `2tp / (2tp + fp + fn)`, 0 when nothing was predicted or expected.
    pub fn f1(&self) -> f64 {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }

    pub fn add(&mut self, other: &ClassCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

/// Detection counts per class, in taxonomy order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionCounts {
    pub per_class: Vec<ClassCounts>,
}

impl DetectionCounts {
    pub fn zeros(classes: usize) -> Self {
        Self {
            per_class: vec![ClassCounts::default(); classes],
        }
    }

    /// Counts from one result per class (as returned by `match_nuclei`).
    pub fn from_matches(matches: &[MatchResult]) -> Self {
        Self {
            per_class: matches
                .iter()
                .map(|m| ClassCounts {
                    tp: m.tp() as u64,
                    fp: m.fp() as u64,
                    fn_: m.fn_() as u64,
                })
                .collect(),
        }
    }

    /// Adds another case's counts (dataset-level pooling).
    pub fn accumulate(&mut self, other: &DetectionCounts) -> Result<(), MetricsError> {
        if other.per_class.len() != self.per_class.len() {
            return Err(MetricsError::ClassCountMismatch(
                self.per_class.len(),
                other.per_class.len(),
            ));
        }
        for (a, b) in self.per_class.iter_mut().zip(&other.per_class) {
            a.add(b);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassDetection {
    pub f1: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub counts: Option<ClassCounts>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionSummary {
    pub per_class: Vec<ClassDetection>,
    pub macro_f1: f64,
}

impl DetectionSummary {
    pub fn from_counts(counts: &DetectionCounts) -> Self {
        let per_class: Vec<ClassDetection> = counts
            .per_class
            .iter()
            .map(|c| ClassDetection {
                f1: c.f1(),
                precision: Some(c.precision()),
                recall: Some(c.recall()),
                counts: Some(*c),
            })
            .collect();
        Self::from_classes(per_class)
    }

    /// Summary from bare per-class F1 values, with no counts behind them.
    pub fn from_f1_values(values: &[f64]) -> Self {
        Self::from_classes(
            values
                .iter()
                .map(|&f1| ClassDetection {
                    f1,
                    precision: None,
                    recall: None,
                    counts: None,
                })
                .collect(),
        )
    }

    fn from_classes(per_class: Vec<ClassDetection>) -> Self {
        let macro_f1 = if per_class.is_empty() {
            0.0
        } else {
            per_class.iter().map(|c| c.f1).sum::<f64>() / per_class.len() as f64
        };
        Self {
            per_class,
            macro_f1,
        }
    }
}

/// Per-class precision, recall and F1 of a single matching, averaged over
/// every taxonomy class. Results for classes outside the taxonomy are ignored.
pub fn detection_f1(matches: &[MatchResult], taxonomy: &Taxonomy) -> DetectionSummary {
    let mut counts = DetectionCounts::zeros(taxonomy.len());
    for m in matches.iter().filter(|m| taxonomy.contains(m.class_index)) {
        counts.per_class[m.class_index as usize - 1].add(&ClassCounts {
            tp: m.tp() as u64,
            fp: m.fp() as u64,
            fn_: m.fn_() as u64,
        });
    }
    DetectionSummary::from_counts(&counts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f1_from_counts() {
        let c = ClassCounts {
            tp: 8,
            fp: 3,
            fn_: 2,
        };
        assert!((c.f1() - 16.0 / 21.0).abs() < 1e-15);
        assert!((c.precision() - 8.0 / 11.0).abs() < 1e-15);
        assert!((c.recall() - 0.8).abs() < 1e-15);
    }

    #[test]
    fn zero_denominators() {
        let c = ClassCounts::default();
        assert_eq!((c.precision(), c.recall(), c.f1()), (0.0, 0.0, 0.0));
        let only_fp = ClassCounts {
            tp: 0,
            fp: 4,
            fn_: 0,
        };
        assert_eq!(
            (only_fp.precision(), only_fp.recall(), only_fp.f1()),
            (0.0, 0.0, 0.0)
        );
    }

    #[test]
    fn macro_over_all_classes() {
        let s = DetectionSummary::from_f1_values(&[0.725, 0.744, 0.364]);
        assert!((s.macro_f1 - 0.611).abs() < 5e-4);
        let s = DetectionSummary::from_f1_values(&[0.734, 0.753, 0.424]);
        assert!((s.macro_f1 - 0.637).abs() < 5e-4);
    }

    #[test]
    fn absent_classes_pull_macro_down() {
        let counts = DetectionCounts {
            per_class: vec![
                ClassCounts {
                    tp: 5,
                    fp: 0,
                    fn_: 0,
                },
                ClassCounts::default(),
            ],
        };
        let s = DetectionSummary::from_counts(&counts);
        assert_eq!(s.macro_f1, 0.5);
    }

    #[test]
    fn accumulate_checks_shape() {
        let mut a = DetectionCounts::zeros(2);
        assert!(a.accumulate(&DetectionCounts::zeros(3)).is_err());
        a.accumulate(&DetectionCounts {
            per_class: vec![
                ClassCounts {
                    tp: 1,
                    fp: 2,
                    fn_: 3
                };
                2
            ],
        })
        .unwrap();
        assert_eq!(
            a.per_class[1],
            ClassCounts {
                tp: 1,
                fp: 2,
                fn_: 3
            }
        );
    }
}
