//! Tissue Dice and nuclei detection F1.

mod assignment;
mod detection;
mod dice;
mod matching;

pub use assignment::solve_min_cost;
pub use detection::{detection_f1, ClassCounts, ClassDetection, DetectionCounts, DetectionSummary};
pub use dice::{
    aggregate_dice, dice_counts, AbsentPolicy, ClassDiceCounts, DiceCounts, DiceMode, DiceSummary,
};
pub use matching::{match_nuclei, MatchResult, MatchStrategy, MatchedPair, DEFAULT_RADIUS};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("mask dimensions differ: prediction {pred:?}, ground truth {gt:?}")]
    DimensionMismatch { pred: (u32, u32), gt: (u32, u32) },
    #[error("nothing to aggregate")]
    EmptyInput,
    #[error("per-class inputs disagree on the number of classes ({0} vs {1})")]
    ClassCountMismatch(usize, usize),
    #[error("matching radius must be positive and finite, got {0}")]
    NonPositiveRadius(f64),
}

/// Unweighted mean over the defined entries; `None` when there are none.
pub fn macro_average<I>(values: I) -> Option<f64>
where
    I: IntoIterator<Item = Option<f64>>,
{
    let (sum, n) = values
        .into_iter()
        .flatten()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}
