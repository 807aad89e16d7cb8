use serde::{Deserialize, Serialize};

use super::{macro_average, MetricsError};
use crate::raster::LabelMask;
use crate::taxonomy::Taxonomy;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassDiceCounts {
    pub intersection: u64,
    pub pred: u64,
    pub gt: u64,
}

impl ClassDiceCounts {
    /// `2|A∩B| / (|A| + |B|)`, undefined when both sets are empty.
    pub fn dice(&self) -> Option<f64> {
        let denom = self.pred + self.gt;
        (denom > 0).then(|| 2.0 * self.intersection as f64 / denom as f64)
    }

    fn add(&mut self, other: &ClassDiceCounts) {
        self.intersection += other.intersection;
        self.pred += other.pred;
        self.gt += other.gt;
    }
}

/// Per-class pixel counts of one case, in taxonomy order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiceCounts {
    pub per_class: Vec<ClassDiceCounts>,
}

pub fn dice_counts(
    pred: &LabelMask,
    gt: &LabelMask,
    taxonomy: &Taxonomy,
) -> Result<DiceCounts, MetricsError> {
    if (pred.width(), pred.height()) != (gt.width(), gt.height()) {
        return Err(MetricsError::DimensionMismatch {
            pred: (pred.width(), pred.height()),
            gt: (gt.width(), gt.height()),
        });
    }
    let n = taxonomy.len();
    let mut per_class = vec![ClassDiceCounts::default(); n];
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        // values outside the taxonomy (and background) are not scored
        if p >= 1 && (p as usize) <= n {
            per_class[p as usize - 1].pred += 1;
        }
        if g >= 1 && (g as usize) <= n {
            per_class[g as usize - 1].gt += 1;
            if p == g {
                per_class[g as usize - 1].intersection += 1;
            }
        }
    }
    Ok(DiceCounts { per_class })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiceMode {
    /// Sum counts over all cases, then divide.
    #[default]
    Pooled,
    /// Mean of per-case Dice values.
    PerImageMean,
}

/// What a class absent from both prediction and ground truth scores.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbsentPolicy {
    #[default]
    Skip,
    ScoreOne,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiceSummary {
    /// Taxonomy order; `None` when the class was never scored.
    pub per_class: Vec<Option<f64>>,
    pub macro_dice: Option<f64>,
}

impl DiceSummary {
    pub fn from_values(per_class: Vec<Option<f64>>) -> Self {
        let macro_dice = macro_average(per_class.iter().copied());
        Self {
            per_class,
            macro_dice,
        }
    }
}

pub fn aggregate_dice(
    counts: &[DiceCounts],
    mode: DiceMode,
    absent: AbsentPolicy,
) -> Result<DiceSummary, MetricsError> {
    let first = counts.first().ok_or(MetricsError::EmptyInput)?;
    let n = first.per_class.len();
    if let Some(bad) = counts.iter().find(|c| c.per_class.len() != n) {
        return Err(MetricsError::ClassCountMismatch(n, bad.per_class.len()));
    }
    let absent_value = match absent {
        AbsentPolicy::Skip => None,
        AbsentPolicy::ScoreOne => Some(1.0),
    };
    let per_class = (0..n)
        .map(|k| match mode {
            DiceMode::Pooled => {
                let mut total = ClassDiceCounts::default();
                for c in counts {
                    total.add(&c.per_class[k]);
                }
                total.dice().or(absent_value)
            }
            DiceMode::PerImageMean => macro_average(
                counts
                    .iter()
                    .map(|c| c.per_class[k].dice().or(absent_value)),
            ),
        })
        .collect();
    Ok(DiceSummary::from_values(per_class))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::ClassIndex;

    fn mask(w: u32, h: u32, data: &[ClassIndex]) -> LabelMask {
        LabelMask::from_data(w, h, data.to_vec()).unwrap()
    }

    fn one_class() -> Taxonomy {
        Taxonomy::new("t", &["a"]).unwrap()
    }

    #[test]
    fn identical_masks_score_one() {
        let m = mask(3, 2, &[0, 1, 2, 2, 1, 0]);
        let tax = Taxonomy::new("t", &["a", "b", "c"]).unwrap();
        let c = dice_counts(&m, &m, &tax).unwrap();
        assert_eq!(c.per_class[0].dice(), Some(1.0));
        assert_eq!(c.per_class[1].dice(), Some(1.0));
        assert_eq!(c.per_class[2].dice(), None);
    }

    #[test]
    fn disjoint_masks_score_zero() {
        let p = mask(4, 2, &[1, 1, 1, 1, 0, 0, 0, 0]);
        let g = mask(4, 2, &[0, 0, 0, 0, 1, 1, 1, 1]);
        let c = dice_counts(&p, &g, &one_class()).unwrap();
        assert_eq!(c.per_class[0].dice(), Some(0.0));
    }

    #[test]
    fn half_overlap() {
        // pred 4 px, gt 4 px, overlap 2 -> 2*2/8
        let p = mask(6, 1, &[1, 1, 1, 1, 0, 0]);
        let g = mask(6, 1, &[0, 0, 1, 1, 1, 1]);
        let c = dice_counts(&p, &g, &one_class()).unwrap();
        assert_eq!(
            c.per_class[0],
            ClassDiceCounts {
                intersection: 2,
                pred: 4,
                gt: 4
            }
        );
        assert_eq!(c.per_class[0].dice(), Some(0.5));
    }

    #[test]
    fn dimension_mismatch() {
        let r = dice_counts(&mask(2, 1, &[0, 0]), &mask(1, 2, &[0, 0]), &one_class());
        assert!(matches!(r, Err(MetricsError::DimensionMismatch { .. })));
    }

    #[test]
    fn empty_input_is_an_error() {
        assert_eq!(
            aggregate_dice(&[], DiceMode::Pooled, AbsentPolicy::Skip),
            Err(MetricsError::EmptyInput)
        );
    }

    #[test]
    fn single_case_perfect_agrees_in_both_modes() {
        let m = mask(2, 2, &[1, 1, 0, 0]);
        let c = vec![dice_counts(&m, &m, &one_class()).unwrap()];
        for mode in [DiceMode::Pooled, DiceMode::PerImageMean] {
            let s = aggregate_dice(&c, mode, AbsentPolicy::Skip).unwrap();
            assert_eq!(s.per_class, vec![Some(1.0)]);
            assert_eq!(s.macro_dice, Some(1.0));
        }
    }

    #[test]
    fn pooled_and_per_image_differ() {
        let a = DiceCounts {
            per_class: vec![ClassDiceCounts {
                intersection: 1,
                pred: 1,
                gt: 1,
            }],
        };
        let b = DiceCounts {
            per_class: vec![ClassDiceCounts {
                intersection: 0,
                pred: 9,
                gt: 9,
            }],
        };
        let pooled = aggregate_dice(
            &[a.clone(), b.clone()],
            DiceMode::Pooled,
            AbsentPolicy::Skip,
        )
        .unwrap();
        assert!((pooled.per_class[0].unwrap() - 0.1).abs() < 1e-15);
        let mean = aggregate_dice(&[a, b], DiceMode::PerImageMean, AbsentPolicy::Skip).unwrap();
        assert_eq!(mean.per_class[0], Some(0.5));
    }

    #[test]
    fn absent_policy() {
        let present = ClassDiceCounts {
            intersection: 2,
            pred: 4,
            gt: 4,
        };
        let counts = vec![
            DiceCounts {
                per_class: vec![present, ClassDiceCounts::default()],
            },
            DiceCounts {
                per_class: vec![ClassDiceCounts::default(), ClassDiceCounts::default()],
            },
        ];
        let skip = aggregate_dice(&counts, DiceMode::PerImageMean, AbsentPolicy::Skip).unwrap();
        assert_eq!(skip.per_class, vec![Some(0.5), None]);
        assert_eq!(skip.macro_dice, Some(0.5));
        let one = aggregate_dice(&counts, DiceMode::PerImageMean, AbsentPolicy::ScoreOne).unwrap();
        assert_eq!(one.per_class, vec![Some(0.75), Some(1.0)]);
        let pooled = aggregate_dice(&counts, DiceMode::Pooled, AbsentPolicy::Skip).unwrap();
        assert_eq!(pooled.per_class, vec![Some(0.5), None]);
    }

    #[test]
    fn missed_class_scores_zero_not_absent() {
        // ground truth has the class, prediction never does
        let c = DiceCounts {
            per_class: vec![ClassDiceCounts {
                intersection: 0,
                pred: 0,
                gt: 10,
            }],
        };
        let s = aggregate_dice(&[c], DiceMode::Pooled, AbsentPolicy::Skip).unwrap();
        assert_eq!(s.per_class, vec![Some(0.0)]);
    }
}
