//! Synthetic case pairs with analytically known scores.
//!
//! Nuclei sit one per cell of a square grid whose pitch exceeds twice the
//! matching radius, so every prediction can only match its own ground-truth
//! nucleus. Ground-truth nuclei are axis-aligned squares on integer corners
//! (their pixel centroid is exactly the cell centre). Predictions alternate
//! between squares and bare points, are jittered by at most
//! `JITTER_FRACTION * radius`, and spurious predictions occupy empty cells.
//!
//! Tissue regions are integer rectangles on a separate grid; the prediction
//! is each rectangle shrunk by `tissue_erosion` pixels per side, so the pixel
//! counts and therefore Dice are known exactly.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotations::{
    write_annotation_file, Annotation, AnnotationSet, Geometry, Layer, Point,
};
use crate::dataset::{write_dims, DIMS_FILE, NUCLEI_DIR, TISSUE_DIR};
use crate::metrics::{ClassDiceCounts, DetectionCounts, DiceCounts, DEFAULT_RADIUS};
use crate::rng::SplitMix64;
use crate::taxonomy::{ClassIndex, Taxonomy};

/// Half the side of a nucleus square, in pixels.
pub const NUCLEUS_HALF_SIDE: u32 = 3;
/// Jitter is clipped to this fraction of the radius.
pub const JITTER_FRACTION: f64 = 0.45;
pub const TISSUE_CELL: u32 = 64;
const TISSUE_MIN_SIDE: u32 = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    pub width: u32,
    pub height: u32,
    /// Ground-truth nuclei per class, in taxonomy order.
    pub nuclei_per_class: Vec<usize>,
    /// Tissue rectangles per class, in taxonomy order.
    pub tissue_regions_per_class: Vec<usize>,
    pub drop_count: usize,
    pub spurious_count: usize,
    pub jitter_sigma: f64,
    pub tissue_erosion: u32,
    pub radius: f64,
}

impl SynthSpec {
    pub fn new(seed: u64, width: u32, height: u32, nuclei_per_class: Vec<usize>) -> Self {
        Self {
            seed,
            width,
            height,
            nuclei_per_class,
            tissue_regions_per_class: Vec::new(),
            drop_count: 0,
            spurious_count: 0,
            jitter_sigma: 0.0,
            tissue_erosion: 0,
            radius: DEFAULT_RADIUS,
        }
    }

    /// Grid pitch: more than twice the radius plus room for a jittered square.
    pub fn cell_size(&self) -> u32 {
        (2.0 * self.radius).ceil() as u32 + 2 * NUCLEUS_HALF_SIDE + 2
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("canvas {width}x{height} holds {capacity} {what} cells, {needed} needed")]
    CanvasTooSmall {
        what: &'static str,
        width: u32,
        height: u32,
        capacity: usize,
        needed: usize,
    },
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Expected {
    pub detection: DetectionCounts,
    pub dice_counts: DiceCounts,
    pub dice: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCase {
    pub gt_nuclei: AnnotationSet,
    pub pred_nuclei: AnnotationSet,
    pub gt_tissue: AnnotationSet,
    pub pred_tissue: AnnotationSet,
    pub expected: Expected,
}

fn rect(x0: u32, y0: u32, x1: u32, y1: u32) -> Geometry {
    let (x0, y0, x1, y1) = (x0 as f64, y0 as f64, x1 as f64, y1 as f64);
    Geometry::Polygon {
        outer: vec![
            Point::new(x0, y0),
            Point::new(x1, y0),
            Point::new(x1, y1),
            Point::new(x0, y1),
        ],
        holes: Vec::new(),
    }
}

fn square(cx: i64, cy: i64) -> Geometry {
    let h = NUCLEUS_HALF_SIDE as i64;
    rect(
        (cx - h) as u32,
        (cy - h) as u32,
        (cx + h) as u32,
        (cy + h) as u32,
    )
}

fn annotation(geometry: Geometry, class_index: ClassIndex, layer: Layer) -> Annotation {
    Annotation {
        geometry,
        class_index,
        layer,
    }
}

/// Jitter vector with magnitude at most `limit`.
fn jitter(rng: &mut SplitMix64, sigma: f64, limit: f64) -> (f64, f64) {
    if sigma == 0.0 {
        return (0.0, 0.0);
    }
    let (dx, dy) = (sigma * rng.normal(), sigma * rng.normal());
    let norm = dx.hypot(dy);
    if norm > limit {
        (dx * limit / norm, dy * limit / norm)
    } else {
        (dx, dy)
    }
}

pub fn generate_case(case_id: &str, spec: &SynthSpec) -> Result<SynthCase, SynthError> {
    if !(spec.radius > 0.0 && spec.radius.is_finite()) {
        return Err(SynthError::InvalidSpec(format!("radius {}", spec.radius)));
    }
    if !(spec.jitter_sigma >= 0.0 && spec.jitter_sigma.is_finite()) {
        return Err(SynthError::InvalidSpec(format!(
            "jitter_sigma {}",
            spec.jitter_sigma
        )));
    }
    let n_classes = spec.nuclei_per_class.len();
    if n_classes == 0 || n_classes > ClassIndex::MAX as usize {
        return Err(SynthError::InvalidSpec(
            "nuclei_per_class must be non-empty".into(),
        ));
    }
    let total: usize = spec.nuclei_per_class.iter().sum();
    if spec.drop_count > total {
        return Err(SynthError::InvalidSpec(format!(
            "drop_count {} exceeds {total} nuclei",
            spec.drop_count
        )));
    }
    if spec.width == 0 || spec.height == 0 {
        return Err(SynthError::InvalidSpec("empty canvas".into()));
    }

    let mut rng = SplitMix64::new(spec.seed);
    let mut gt_nuclei = AnnotationSet::new(case_id, spec.width, spec.height);
    let mut pred_nuclei = gt_nuclei.clone();
    let mut detection = DetectionCounts::zeros(n_classes);

    let cell = spec.cell_size();
    let (cols, rows) = ((spec.width / cell) as usize, (spec.height / cell) as usize);
    let needed = total + spec.spurious_count;
    if cols * rows < needed {
        return Err(SynthError::CanvasTooSmall {
            what: "nucleus",
            width: spec.width,
            height: spec.height,
            capacity: cols * rows,
            needed,
        });
    }
    let mut cells: Vec<usize> = (0..cols * rows).collect();
    rng.shuffle(&mut cells);
    let centre = |k: usize| {
        let (c, r) = ((k % cols) as i64, (k / cols) as i64);
        (
            c * cell as i64 + cell as i64 / 2,
            r * cell as i64 + cell as i64 / 2,
        )
    };

    let classes: Vec<ClassIndex> = spec
        .nuclei_per_class
        .iter()
        .enumerate()
        .flat_map(|(i, &n)| std::iter::repeat_n((i + 1) as ClassIndex, n))
        .collect();
    let mut dropped = vec![false; total];
    let mut order: Vec<usize> = (0..total).collect();
    rng.shuffle(&mut order);
    for &i in &order[..spec.drop_count] {
        dropped[i] = true;
    }

    let limit = JITTER_FRACTION * spec.radius;
    for (i, &class) in classes.iter().enumerate() {
        let (cx, cy) = centre(cells[i]);
        gt_nuclei
            .annotations
            .push(annotation(square(cx, cy), class, Layer::Nuclei));
        let counts = &mut detection.per_class[class as usize - 1];
        if dropped[i] {
            counts.fn_ += 1;
            continue;
        }
        counts.tp += 1;
        let (dx, dy) = jitter(&mut rng, spec.jitter_sigma, limit);
        let geometry = if i % 2 == 0 {
            // truncation keeps the integer offset inside the clipped disc
            square(cx + dx.trunc() as i64, cy + dy.trunc() as i64)
        } else {
            Geometry::Point(Point::new(cx as f64 + dx, cy as f64 + dy))
        };
        pred_nuclei
            .annotations
            .push(annotation(geometry, class, Layer::Nuclei));
    }
    for j in 0..spec.spurious_count {
        let (cx, cy) = centre(cells[total + j]);
        let class = 1 + rng.below(n_classes as u64) as ClassIndex;
        detection.per_class[class as usize - 1].fp += 1;
        let geometry = if j % 2 == 0 {
            square(cx, cy)
        } else {
            Geometry::Point(Point::new(cx as f64, cy as f64))
        };
        pred_nuclei
            .annotations
            .push(annotation(geometry, class, Layer::Nuclei));
    }

    let (gt_tissue, pred_tissue, dice_counts) = tissue(case_id, spec, &mut rng)?;
    let dice = dice_counts
        .per_class
        .iter()
        .map(ClassDiceCounts::dice)
        .collect();
    Ok(SynthCase {
        gt_nuclei,
        pred_nuclei,
        gt_tissue,
        pred_tissue,
        expected: Expected {
            detection,
            dice_counts,
            dice,
        },
    })
}

fn tissue(
    case_id: &str,
    spec: &SynthSpec,
    rng: &mut SplitMix64,
) -> Result<(AnnotationSet, AnnotationSet, DiceCounts), SynthError> {
    let mut gt = AnnotationSet::new(case_id, spec.width, spec.height);
    let mut pred = gt.clone();
    let mut counts = DiceCounts {
        per_class: vec![ClassDiceCounts::default(); spec.tissue_regions_per_class.len()],
    };
    let needed: usize = spec.tissue_regions_per_class.iter().sum();
    if needed == 0 {
        return Ok((gt, pred, counts));
    }
    let (cols, rows) = (
        (spec.width / TISSUE_CELL) as usize,
        (spec.height / TISSUE_CELL) as usize,
    );
    if cols * rows < needed {
        return Err(SynthError::CanvasTooSmall {
            what: "tissue",
            width: spec.width,
            height: spec.height,
            capacity: cols * rows,
            needed,
        });
    }
    let mut cells: Vec<usize> = (0..cols * rows).collect();
    rng.shuffle(&mut cells);
    let e = spec.tissue_erosion;
    let max_side = TISSUE_CELL - 2;
    let mut next = 0;
    for (i, &n) in spec.tissue_regions_per_class.iter().enumerate() {
        let class = (i + 1) as ClassIndex;
        for _ in 0..n {
            let k = cells[next];
            next += 1;
            let w = TISSUE_MIN_SIDE + rng.below((max_side - TISSUE_MIN_SIDE + 1) as u64) as u32;
            let h = TISSUE_MIN_SIDE + rng.below((max_side - TISSUE_MIN_SIDE + 1) as u64) as u32;
            let x0 =
                (k % cols) as u32 * TISSUE_CELL + rng.below((TISSUE_CELL - w + 1) as u64) as u32;
            let y0 =
                (k / cols) as u32 * TISSUE_CELL + rng.below((TISSUE_CELL - h + 1) as u64) as u32;
            gt.annotations.push(annotation(
                rect(x0, y0, x0 + w, y0 + h),
                class,
                Layer::Tissue,
            ));
            let c = &mut counts.per_class[i];
            c.gt += (w * h) as u64;
            if w > 2 * e && h > 2 * e {
                pred.annotations.push(annotation(
                    rect(x0 + e, y0 + e, x0 + w - e, y0 + h - e),
                    class,
                    Layer::Tissue,
                ));
                let area = ((w - 2 * e) * (h - 2 * e)) as u64;
                c.pred += area;
                c.intersection += area;
            }
        }
    }
    Ok((gt, pred, counts))
}

/// Writes `gt/` and `pred/` dataset trees plus `expected.json` under `root`.
/// `expected.json` maps case ids to their [`Expected`] scores.
pub fn write_dataset(
    root: &Path,
    cases: &[(String, SynthCase)],
    tissue_taxonomy: &Taxonomy,
    nuclei_taxonomy: &Taxonomy,
) -> std::io::Result<()> {
    let mut dims = BTreeMap::new();
    let mut expected = BTreeMap::new();
    for side in ["gt", "pred"] {
        fs::create_dir_all(root.join(side).join(TISSUE_DIR))?;
        fs::create_dir_all(root.join(side).join(NUCLEI_DIR))?;
    }
    for (id, case) in cases {
        let files = [
            ("gt", TISSUE_DIR, &case.gt_tissue, tissue_taxonomy),
            ("pred", TISSUE_DIR, &case.pred_tissue, tissue_taxonomy),
            ("gt", NUCLEI_DIR, &case.gt_nuclei, nuclei_taxonomy),
            ("pred", NUCLEI_DIR, &case.pred_nuclei, nuclei_taxonomy),
        ];
        for (side, dir, set, tax) in files {
            fs::write(
                root.join(side).join(dir).join(format!("{id}.json")),
                write_annotation_file(set, tax),
            )?;
        }
        dims.insert(id.clone(), (case.gt_nuclei.width, case.gt_nuclei.height));
        expected.insert(id.clone(), &case.expected);
    }
    let dims = write_dims(&dims);
    fs::write(root.join("gt").join(DIMS_FILE), &dims)?;
    fs::write(root.join("pred").join(DIMS_FILE), &dims)?;
    let mut json = serde_json::to_string_pretty(&expected).map_err(std::io::Error::other)?;
    json.push('\n');
    fs::write(root.join("expected.json"), json)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{match_nuclei, MatchStrategy};
    use crate::raster::{nuclei_via_mask, rasterize, Connectivity};

    fn spec() -> SynthSpec {
        let mut s = SynthSpec::new(11, 512, 512, vec![4, 3, 3]);
        s.tissue_regions_per_class = vec![2, 1, 1, 0, 1];
        s
    }

    fn detect(case: &SynthCase) -> DetectionCounts {
        let t1 = Taxonomy::track1();
        let gt = nuclei_via_mask(&case.gt_nuclei, Connectivity::Eight).unwrap();
        let pred = nuclei_via_mask(&case.pred_nuclei, Connectivity::Eight).unwrap();
        let m = match_nuclei(&pred, &gt, &t1, DEFAULT_RADIUS, MatchStrategy::Optimal).unwrap();
        DetectionCounts::from_matches(&m)
    }

    #[test]
    fn unperturbed_is_perfect() {
        let c = generate_case("c", &spec()).unwrap();
        let d = detect(&c);
        assert_eq!(d, c.expected.detection);
        assert!(d.per_class.iter().all(|k| k.fp == 0 && k.fn_ == 0));
        assert_eq!(c.expected.dice[0], Some(1.0));
        assert_eq!(c.expected.dice[3], None);
    }

    #[test]
    fn drop_and_spurious_counts() {
        let mut s = spec();
        s.drop_count = 2;
        s.spurious_count = 3;
        s.jitter_sigma = 4.0;
        let c = generate_case("c", &s).unwrap();
        let total = c.expected.detection.per_class.iter().fold(
            crate::metrics::ClassCounts::default(),
            |mut a, k| {
                a.add(k);
                a
            },
        );
        assert_eq!((total.tp, total.fp, total.fn_), (8, 3, 2));
        assert_eq!(detect(&c), c.expected.detection);
    }

    #[test]
    fn rasterized_tissue_matches_expected_counts() {
        let mut s = spec();
        s.tissue_erosion = 2;
        let c = generate_case("c", &s).unwrap();
        let pred = rasterize(&c.pred_tissue).unwrap();
        let gt = rasterize(&c.gt_tissue).unwrap();
        let counts = crate::metrics::dice_counts(&pred, &gt, &Taxonomy::tissue()).unwrap();
        assert_eq!(counts, c.expected.dice_counts);
    }

    #[test]
    fn dice_decreases_with_erosion() {
        let mut last = f64::INFINITY;
        for e in 0..4 {
            let mut s = spec();
            s.tissue_erosion = e;
            let d = generate_case("c", &s).unwrap().expected.dice[0].unwrap();
            assert!(d < last);
            last = d;
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let mut s = spec();
        s.jitter_sigma = 3.0;
        s.spurious_count = 2;
        let t1 = Taxonomy::track1();
        let a = generate_case("c", &s).unwrap();
        let b = generate_case("c", &s).unwrap();
        assert_eq!(
            write_annotation_file(&a.pred_nuclei, &t1),
            write_annotation_file(&b.pred_nuclei, &t1)
        );
        s.seed += 1;
        let c = generate_case("c", &s).unwrap();
        assert_ne!(a.gt_nuclei, c.gt_nuclei);
    }

    #[test]
    fn canvas_too_small() {
        let s = SynthSpec::new(0, 64, 64, vec![5]);
        assert!(matches!(
            generate_case("c", &s),
            Err(SynthError::CanvasTooSmall { .. })
        ));
    }
}
