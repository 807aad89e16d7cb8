//! Dense label masks from polygon annotations, instance extraction and centroids.
//!
//! Pixel `(i, j)` (column, row) is sampled at its center `(i + 0.5, j + 0.5)`.
//! Polygons fill under the even-odd rule across all of their rings, so holes
//! subtract and self-intersecting rings still produce a deterministic mask.
//! Annotations paint in order; later ones overwrite earlier ones.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::annotations::{AnnotationSet, Geometry, Point};
use crate::taxonomy::{ClassIndex, BACKGROUND};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RasterError {
    #[error("mask dimensions must be positive, got {width}x{height}")]
    EmptyDimensions { width: u32, height: u32 },
    #[error("mask data has {actual} values, expected {expected}")]
    DataLength { expected: usize, actual: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMask {
    width: u32,
    height: u32,
    data: Vec<ClassIndex>,
}

impl LabelMask {
    pub fn new(width: u32, height: u32) -> Result<Self, RasterError> {
        if width == 0 || height == 0 {
            return Err(RasterError::EmptyDimensions { width, height });
        }
        Ok(Self {
            width,
            height,
            data: vec![BACKGROUND; width as usize * height as usize],
        })
    }

    pub fn from_data(width: u32, height: u32, data: Vec<ClassIndex>) -> Result<Self, RasterError> {
        if width == 0 || height == 0 {
            return Err(RasterError::EmptyDimensions { width, height });
        }
        let expected = width as usize * height as usize;
        if data.len() != expected {
            return Err(RasterError::DataLength {
                expected,
                actual: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    /// Row-major values.
    pub fn data(&self) -> &[ClassIndex] {
        &self.data
    }

    pub fn get(&self, x: u32, y: u32) -> ClassIndex {
        self.data[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, value: ClassIndex) {
        let w = self.width as usize;
        self.data[y as usize * w + x as usize] = value;
    }

    pub fn count(&self, class: ClassIndex) -> usize {
        self.data.iter().filter(|&&v| v == class).count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceMask {
    pub width: u32,
    pub height: u32,
    /// Row-major instance ids, 0 = none.
    pub data: Vec<u32>,
    /// Class of instance `id` at position `id - 1`.
    pub labels: Vec<ClassIndex>,
}

impl InstanceMask {
    pub fn instance_count(&self) -> usize {
        self.labels.len()
    }

    pub fn label(&self, id: u32) -> Option<ClassIndex> {
        if id == 0 {
            return None;
        }
        self.labels.get(id as usize - 1).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Nucleus {
    pub centroid: Point,
    pub class_index: ClassIndex,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NucleiSet {
    pub case_id: String,
    pub nuclei: Vec<Nucleus>,
}

impl NucleiSet {
    pub fn new(case_id: impl Into<String>) -> Self {
        Self {
            case_id: case_id.into(),
            nuclei: Vec::new(),
        }
    }
}

/// Collects x positions where the ring edges cross the horizontal line `y`.
///
/// Half-open rule per edge (`min(y0, y1) <= y < max(y0, y1)`), so a closed
/// ring always contributes an even number of crossings.
fn push_crossings(ring: &[Point], y: f64, out: &mut Vec<f64>) {
    let n = ring.len();
    for k in 0..n {
        let a = ring[k];
        let b = ring[(k + 1) % n];
        if (a.y <= y && y < b.y) || (b.y <= y && y < a.y) {
            out.push(a.x + (y - a.y) * (b.x - a.x) / (b.y - a.y));
        }
    }
}

/// Fills the polygon (even-odd over all rings) with `value` into `mask`.
fn fill_polygon(mask: &mut LabelMask, rings: &[&[Point]], value: ClassIndex) {
    let (w, h) = (mask.width as i64, mask.height as i64);
    let mut min_y = f64::INFINITY;
    let mut max_y = f64::NEG_INFINITY;
    for r in rings {
        for p in r.iter() {
            min_y = min_y.min(p.y);
            max_y = max_y.max(p.y);
        }
    }
    if !min_y.is_finite() || !max_y.is_finite() {
        return;
    }
    // rows whose center lies in [min_y, max_y)
    let row_start = ((min_y - 0.5).ceil() as i64).max(0);
    let row_end = ((max_y - 0.5).ceil() as i64).min(h);
    let mut xs = Vec::new();
    for j in row_start..row_end {
        let y = j as f64 + 0.5;
        xs.clear();
        for r in rings {
            push_crossings(r, y, &mut xs);
        }
        xs.sort_by(f64::total_cmp);
        // center c is inside iff an odd number of crossings are <= c,
        // i.e. xs[2k] <= c < xs[2k + 1]
        for span in xs.chunks_exact(2) {
            let start = ((span[0] - 0.5).ceil() as i64).max(0);
            let end = ((span[1] - 0.5).ceil() as i64).min(w);
            for i in start..end {
                mask.set(i as u32, j as u32, value);
            }
        }
    }
}

/// Paints every polygon annotation of `set` into a fresh mask.
///
/// Point annotations carry no area and are skipped.
pub fn rasterize(set: &AnnotationSet) -> Result<LabelMask, RasterError> {
    let mut mask = LabelMask::new(set.width, set.height)?;
    for a in &set.annotations {
        if let Geometry::Polygon { outer, holes } = &a.geometry {
            let rings: Vec<&[Point]> = std::iter::once(outer.as_slice())
                .chain(holes.iter().map(Vec::as_slice))
                .collect();
            fill_polygon(&mut mask, &rings, a.class_index);
        }
    }
    Ok(mask)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Connectivity {
    Four,
    #[default]
    Eight,
}

struct DisjointSet {
    parent: Vec<u32>,
}

impl DisjointSet {
    fn new() -> Self {
        // slot 0 is unused so labels can start at 1
        Self { parent: vec![0] }
    }

    fn make(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        id
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let grand = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = grand;
            x = grand;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi as usize] = lo;
        }
    }
}

/// Labels maximal same-class connected regions of nonzero pixels.
///
/// Instance ids follow the raster-scan order of each component's first pixel.
pub fn connected_components(mask: &LabelMask, connectivity: Connectivity) -> InstanceMask {
    let w = mask.width as usize;
    let h = mask.height as usize;
    let data = &mask.data;
    let mut provisional = vec![0u32; w * h];
    let mut sets = DisjointSet::new();

    // already-visited neighbours: W, and N (plus NW, NE for eight-connectivity)
    let offsets: &[(isize, isize)] = match connectivity {
        Connectivity::Four => &[(-1, 0), (0, -1)],
        Connectivity::Eight => &[(-1, 0), (-1, -1), (0, -1), (1, -1)],
    };

    for y in 0..h {
        for x in 0..w {
            let idx = y * w + x;
            let class = data[idx];
            if class == BACKGROUND {
                continue;
            }
            let mut label = 0u32;
            for &(dx, dy) in offsets {
                let nx = x as isize + dx;
                let ny = y as isize + dy;
                if nx < 0 || ny < 0 || nx >= w as isize {
                    continue;
                }
                let nidx = ny as usize * w + nx as usize;
                if data[nidx] != class {
                    continue;
                }
                let nl = provisional[nidx];
                if label == 0 {
                    label = nl;
                } else if nl != label {
                    sets.union(label, nl);
                }
            }
            if label == 0 {
                label = sets.make();
            }
            provisional[idx] = label;
        }
    }

    let mut final_id = vec![0u32; sets.parent.len()];
    let mut labels = Vec::new();
    let mut out = vec![0u32; w * h];
    for idx in 0..w * h {
        let p = provisional[idx];
        if p == 0 {
            continue;
        }
        let root = sets.find(p) as usize;
        if final_id[root] == 0 {
            labels.push(data[idx]);
            final_id[root] = labels.len() as u32;
        }
        out[idx] = final_id[root];
    }

    InstanceMask {
        width: mask.width,
        height: mask.height,
        data: out,
        labels,
    }
}

/// One nucleus per instance at the mean of its member pixel centers.
pub fn centroids(inst: &InstanceMask, case_id: &str) -> NucleiSet {
    let n = inst.labels.len();
    let mut sum_x = vec![0.0f64; n];
    let mut sum_y = vec![0.0f64; n];
    let mut count = vec![0u64; n];
    let w = inst.width as usize;
    for (idx, &id) in inst.data.iter().enumerate() {
        if id == 0 {
            continue;
        }
        let k = id as usize - 1;
        sum_x[k] += (idx % w) as f64 + 0.5;
        sum_y[k] += (idx / w) as f64 + 0.5;
        count[k] += 1;
    }
    let nuclei = (0..n)
        .filter(|&k| count[k] > 0)
        .map(|k| Nucleus {
            centroid: Point::new(sum_x[k] / count[k] as f64, sum_y[k] / count[k] as f64),
            class_index: inst.labels[k],
        })
        .collect();
    NucleiSet {
        case_id: case_id.to_string(),
        nuclei,
    }
}

/// Nuclei of an annotation set through the mask route: polygons are
/// rasterized, split into components and reduced to pixel centroids; point
/// annotations are appended as-is in file order.
pub fn nuclei_via_mask(
    set: &AnnotationSet,
    connectivity: Connectivity,
) -> Result<NucleiSet, RasterError> {
    let mask = rasterize(set)?;
    let mut nuclei = centroids(&connected_components(&mask, connectivity), &set.case_id);
    for a in &set.annotations {
        if let Geometry::Point(p) = a.geometry {
            nuclei.nuclei.push(Nucleus {
                centroid: p,
                class_index: a.class_index,
            });
        }
    }
    Ok(nuclei)
}

/// Nuclei of an annotation set with every geometry reduced to its own
/// centroid (area centroid for polygons). Overlapping polygons stay separate.
pub fn nuclei_from_annotations(set: &AnnotationSet) -> NucleiSet {
    NucleiSet {
        case_id: set.case_id.clone(),
        nuclei: set
            .annotations
            .iter()
            .map(|a| Nucleus {
                centroid: a.geometry.centroid(),
                class_index: a.class_index,
            })
            .collect(),
    }
}

/// Per-class pixel counts, indexed by class.
pub fn class_histogram(mask: &LabelMask) -> BTreeMap<ClassIndex, usize> {
    let mut hist = BTreeMap::new();
    for &v in mask.data() {
        *hist.entry(v).or_insert(0) += 1;
    }
    hist
}
