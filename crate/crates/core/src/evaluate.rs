//! Per-case scoring and dataset-level aggregation.
//!
//! Detection counts are pooled over cases before precision, recall and F1
//! are computed. Dice follows the configured [`DiceMode`].

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::metrics::{
    aggregate_dice, dice_counts, match_nuclei, AbsentPolicy, DetectionCounts, DetectionSummary,
    DiceCounts, DiceMode, DiceSummary, MatchStrategy, MetricsError, DEFAULT_RADIUS,
};
use crate::raster::{Connectivity, LabelMask, NucleiSet};
use crate::report::{build_report, ChallengeReport, ConfigEcho, ReportError, Track};
use crate::taxonomy::{Taxonomy, TaxonomyMapping};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub radius: f64,
    pub strategy: MatchStrategy,
    pub dice_mode: DiceMode,
    pub absent_policy: AbsentPolicy,
    pub connectivity: Connectivity,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            radius: DEFAULT_RADIUS,
            strategy: MatchStrategy::Optimal,
            dice_mode: DiceMode::Pooled,
            absent_policy: AbsentPolicy::Skip,
            connectivity: Connectivity::Eight,
        }
    }
}

/// Prediction / ground-truth pairs of one case; either layer may be missing.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseData {
    pub case_id: String,
    pub tissue: Option<(LabelMask, LabelMask)>,
    pub nuclei: Option<(NucleiSet, NucleiSet)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseEvaluation {
    pub case_id: String,
    pub dice: Option<DiceCounts>,
    pub detection: Option<DetectionCounts>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseFailure {
    pub case_id: String,
    pub reason: String,
}

pub fn evaluate_case(
    case: &CaseData,
    tissue_taxonomy: &Taxonomy,
    nuclei_taxonomy: &Taxonomy,
    config: &EvalConfig,
) -> Result<CaseEvaluation, MetricsError> {
    let dice = match &case.tissue {
        Some((pred, gt)) => Some(dice_counts(pred, gt, tissue_taxonomy)?),
        None => None,
    };
    let detection = match &case.nuclei {
        Some((pred, gt)) => {
            let matches = match_nuclei(pred, gt, nuclei_taxonomy, config.radius, config.strategy)?;
            Some(DetectionCounts::from_matches(&matches))
        }
        None => None,
    };
    Ok(CaseEvaluation {
        case_id: case.case_id.clone(),
        dice,
        detection,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetEvaluation {
    pub cases: Vec<CaseEvaluation>,
    pub failures: Vec<CaseFailure>,
    pub tissue: Option<DiceSummary>,
    pub nuclei_counts: Option<DetectionCounts>,
    pub nuclei: Option<DetectionSummary>,
}

/// Scores every case on up to `jobs` worker threads. The result does not
/// depend on `jobs` or on completion order.
pub fn evaluate_dataset(
    cases: &[CaseData],
    tissue_taxonomy: &Taxonomy,
    nuclei_taxonomy: &Taxonomy,
    config: &EvalConfig,
    jobs: usize,
) -> Result<DatasetEvaluation, MetricsError> {
    if !(config.radius > 0.0 && config.radius.is_finite()) {
        return Err(MetricsError::NonPositiveRadius(config.radius));
    }
    let run = || -> Vec<Result<CaseEvaluation, MetricsError>> {
        cases
            .par_iter()
            .map(|c| evaluate_case(c, tissue_taxonomy, nuclei_taxonomy, config))
            .collect()
    };
    let results = match rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
    {
        Ok(pool) => pool.install(run),
        Err(_) => run(),
    };

    let mut evaluated = Vec::new();
    let mut failures = Vec::new();
    for (case, r) in cases.iter().zip(results) {
        match r {
            Ok(e) => evaluated.push(e),
            Err(e) => failures.push(CaseFailure {
                case_id: case.case_id.clone(),
                reason: e.to_string(),
            }),
        }
    }

    let dice: Vec<DiceCounts> = evaluated.iter().filter_map(|e| e.dice.clone()).collect();
    let tissue = if dice.is_empty() {
        None
    } else {
        Some(aggregate_dice(
            &dice,
            config.dice_mode,
            config.absent_policy,
        )?)
    };
    let mut nuclei_counts: Option<DetectionCounts> = None;
    for d in evaluated.iter().filter_map(|e| e.detection.as_ref()) {
        match &mut nuclei_counts {
            Some(total) => total.accumulate(d)?,
            None => nuclei_counts = Some(d.clone()),
        }
    }
    let nuclei = nuclei_counts.as_ref().map(DetectionSummary::from_counts);
    Ok(DatasetEvaluation {
        cases: evaluated,
        failures,
        tissue,
        nuclei_counts,
        nuclei,
    })
}

/// Everything a report needs besides the scores.
#[derive(Debug, Clone)]
pub struct ReportContext<'a> {
    pub track: Track,
    pub tissue_taxonomy: &'a Taxonomy,
    pub nuclei_taxonomy: &'a Taxonomy,
    pub mapping: Option<&'a TaxonomyMapping>,
    pub seed: Option<u64>,
    /// Cases that failed before reaching the metrics (missing files, runner errors).
    pub upstream_failures: usize,
}

impl DatasetEvaluation {
    /// Builds a report. A layer with no scored case reports no Dice values
    /// and zero detection counts respectively.
    pub fn report(
        &self,
        config: &EvalConfig,
        ctx: &ReportContext<'_>,
    ) -> Result<ChallengeReport, ReportError> {
        let tissue = self
            .tissue
            .clone()
            .unwrap_or_else(|| DiceSummary::from_values(vec![None; ctx.tissue_taxonomy.len()]));
        let nuclei = self.nuclei.clone().unwrap_or_else(|| {
            DetectionSummary::from_counts(&DetectionCounts::zeros(ctx.nuclei_taxonomy.len()))
        });
        build_report(
            ctx.track,
            &tissue,
            ctx.tissue_taxonomy,
            &nuclei,
            ctx.nuclei_taxonomy,
            ctx.mapping,
            ConfigEcho {
                radius: config.radius,
                strategy: config.strategy,
                dice_mode: config.dice_mode,
                absent_policy: config.absent_policy,
                connectivity: config.connectivity,
                seed: ctx.seed,
                case_count: self.cases.len() + self.failures.len() + ctx.upstream_failures,
                failed_cases: self.failures.len() + ctx.upstream_failures,
            },
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotations::Point;
    use crate::raster::Nucleus;

    fn nuclei(points: &[(f64, f64, u16)]) -> NucleiSet {
        NucleiSet {
            case_id: "c".into(),
            nuclei: points
                .iter()
                .map(|&(x, y, c)| Nucleus {
                    centroid: Point::new(x, y),
                    class_index: c,
                })
                .collect(),
        }
    }

    fn case(id: &str, pred: &[(f64, f64, u16)], gt: &[(f64, f64, u16)]) -> CaseData {
        CaseData {
            case_id: id.into(),
            tissue: None,
            nuclei: Some((nuclei(pred), nuclei(gt))),
        }
    }

    #[test]
    fn pools_detection_counts() {
        let t1 = Taxonomy::track1();
        let cases = vec![
            case("a", &[(0.0, 0.0, 1)], &[(1.0, 0.0, 1)]),
            case("b", &[(0.0, 0.0, 1), (100.0, 0.0, 2)], &[(50.0, 0.0, 1)]),
        ];
        let e =
            evaluate_dataset(&cases, &Taxonomy::tissue(), &t1, &EvalConfig::default(), 2).unwrap();
        let c = e.nuclei_counts.unwrap();
        assert_eq!(
            (c.per_class[0].tp, c.per_class[0].fp, c.per_class[0].fn_),
            (1, 1, 1)
        );
        assert_eq!(
            (c.per_class[1].tp, c.per_class[1].fp, c.per_class[1].fn_),
            (0, 1, 0)
        );
        assert!(e.tissue.is_none());
    }

    #[test]
    fn failures_are_isolated() {
        let tissue = Taxonomy::tissue();
        let ok = LabelMask::from_data(2, 1, vec![1, 0]).unwrap();
        let other = LabelMask::from_data(1, 2, vec![1, 0]).unwrap();
        let cases = vec![
            CaseData {
                case_id: "good".into(),
                tissue: Some((ok.clone(), ok.clone())),
                nuclei: None,
            },
            CaseData {
                case_id: "bad".into(),
                tissue: Some((ok, other)),
                nuclei: None,
            },
        ];
        let e = evaluate_dataset(
            &cases,
            &tissue,
            &Taxonomy::track1(),
            &EvalConfig::default(),
            1,
        )
        .unwrap();
        assert_eq!(e.cases.len(), 1);
        assert_eq!(e.failures[0].case_id, "bad");
        assert_eq!(e.tissue.unwrap().per_class[0], Some(1.0));
    }

    #[test]
    fn result_independent_of_jobs() {
        let t1 = Taxonomy::track1();
        let cases: Vec<CaseData> = (0..20)
            .map(|i| {
                let x = i as f64 * 3.0;
                case(
                    &format!("c{i}"),
                    &[(x, 0.0, 1 + (i % 3) as u16)],
                    &[(x + 2.0, 1.0, 1)],
                )
            })
            .collect();
        let tissue = Taxonomy::tissue();
        let a = evaluate_dataset(&cases, &tissue, &t1, &EvalConfig::default(), 1).unwrap();
        let b = evaluate_dataset(&cases, &tissue, &t1, &EvalConfig::default(), 8).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn report_counts_failures() {
        let t1 = Taxonomy::track1();
        let tissue = Taxonomy::tissue();
        let cases = vec![case("a", &[(0.0, 0.0, 1)], &[(0.0, 0.0, 1)])];
        let e = evaluate_dataset(&cases, &tissue, &t1, &EvalConfig::default(), 1).unwrap();
        let r = e
            .report(
                &EvalConfig::default(),
                &ReportContext {
                    track: Track::Track1,
                    tissue_taxonomy: &tissue,
                    nuclei_taxonomy: &t1,
                    mapping: None,
                    seed: Some(4),
                    upstream_failures: 2,
                },
            )
            .unwrap();
        assert_eq!(r.config.case_count, 3);
        assert_eq!(r.config.failed_cases, 2);
        assert!(r.tissue.macro_dice.is_none());
        assert_eq!(r.nuclei.classes[0].f1.value, 1.0);
    }
}
