//! Typed polygon/point annotations and the FeatureCollection file format.
//!
//! Accepted input is a top-level object
//!
//! ```json
//! {"type": "FeatureCollection",
//!  "features": [
//!    {"type": "Feature",
//!     "geometry": {"type": "Polygon", "coordinates": [[[x, y], ...], [[x, y], ...]]},
//!     "properties": {"classification": {"name": "Tumor"}}},
//!    {"type": "Feature",
//!     "geometry": {"type": "Point", "coordinates": [x, y]},
//!     "properties": {"classification": {"name": "tils"}}}]}
//! ```
//!
//! The first ring of a polygon is the outer boundary, any further rings are
//! holes. A closing vertex equal to the first one is dropped. Image dimensions
//! never come from the file; callers pass them in.

use serde_json::{json, Value};
use thiserror::Error;

use crate::taxonomy::{ClassIndex, Taxonomy, TaxonomyMapping};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layer {
    Nuclei,
    Tissue,
}

impl std::fmt::Display for Layer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Layer::Nuclei => f.write_str("nuclei"),
            Layer::Tissue => f.write_str("tissue"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Closed ring stored without the duplicated closing vertex.
pub type Ring = Vec<Point>;

#[derive(Debug, Clone, PartialEq)]
pub enum Geometry {
    Polygon { outer: Ring, holes: Vec<Ring> },
    Point(Point),
}

impl Geometry {
    pub fn rings(&self) -> impl Iterator<Item = &Ring> {
        let rings: Vec<&Ring> = match self {
            Geometry::Polygon { outer, holes } => std::iter::once(outer).chain(holes).collect(),
            Geometry::Point(_) => Vec::new(),
        };
        rings.into_iter()
    }

    /// Area centroid of a polygon (holes subtracted), or the point itself.
    /// Falls back to the outer-ring vertex mean when the area vanishes.
    pub fn centroid(&self) -> Point {
        match self {
            Geometry::Point(p) => *p,
            Geometry::Polygon { outer, holes } => {
                let mut area = 0.0;
                let mut cx = 0.0;
                let mut cy = 0.0;
                for (i, ring) in std::iter::once(outer).chain(holes).enumerate() {
                    let (a, x, y) = ring_moments(ring);
                    // outer counts positively whatever its winding, holes negatively
                    let sign = a.signum() * if i == 0 { 1.0 } else { -1.0 };
                    area += sign * a;
                    cx += sign * x;
                    cy += sign * y;
                }
                if area.abs() > 1e-12 {
                    Point::new(cx / area, cy / area)
                } else {
                    let n = outer.len() as f64;
                    Point::new(
                        outer.iter().map(|p| p.x).sum::<f64>() / n,
                        outer.iter().map(|p| p.y).sum::<f64>() / n,
                    )
                }
            }
        }
    }
}

/// Signed area and first moments (area * centroid) of a ring.
fn ring_moments(ring: &[Point]) -> (f64, f64, f64) {
    let mut a = 0.0;
    let mut mx = 0.0;
    let mut my = 0.0;
    for i in 0..ring.len() {
        let p = ring[i];
        let q = ring[(i + 1) % ring.len()];
        let cross = p.x * q.y - q.x * p.y;
        a += cross;
        mx += (p.x + q.x) * cross;
        my += (p.y + q.y) * cross;
    }
    (a / 2.0, mx / 6.0, my / 6.0)
}

/// Shoelace signed area of a ring.
pub fn signed_area(ring: &[Point]) -> f64 {
    ring_moments(ring).0
}

#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub geometry: Geometry,
    pub class_index: ClassIndex,
    pub layer: Layer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationSet {
    pub case_id: String,
    pub width: u32,
    pub height: u32,
    pub annotations: Vec<Annotation>,
}

impl AnnotationSet {
    pub fn new(case_id: impl Into<String>, width: u32, height: u32) -> Self {
        Self {
            case_id: case_id.into(),
            width,
            height,
            annotations: Vec::new(),
        }
    }
}

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("malformed annotation JSON: {0}")]
    MalformedJson(String),
    #[error("feature {ordinal}: {reason}")]
    Schema { ordinal: usize, reason: String },
    #[error("feature {ordinal}: unknown class name `{name}`")]
    UnknownClassName { name: String, ordinal: usize },
    #[error("feature {ordinal}, ring {ring}: fewer than 3 distinct vertices")]
    DegenerateRing { ordinal: usize, ring: usize },
    #[error("image dimensions for case `{0}` are missing or zero")]
    MissingDimensions(String),
    #[error("feature {ordinal}: point geometry is only allowed on the nuclei layer")]
    PointOnTissueLayer { ordinal: usize },
    #[error("annotation {ordinal}: class {class_index} is not in the mapping source")]
    ClassNotInMapping {
        ordinal: usize,
        class_index: ClassIndex,
    },
}

fn schema(ordinal: usize, reason: impl Into<String>) -> AnnotationError {
    AnnotationError::Schema {
        ordinal,
        reason: reason.into(),
    }
}

fn parse_point(v: &Value, ordinal: usize) -> Result<Point, AnnotationError> {
    let pair = v
        .as_array()
        .filter(|a| a.len() >= 2)
        .ok_or_else(|| schema(ordinal, "coordinate is not an [x, y] pair"))?;
    let x = pair[0].as_f64();
    let y = pair[1].as_f64();
    match (x, y) {
        (Some(x), Some(y)) if x.is_finite() && y.is_finite() => Ok(Point::new(x, y)),
        _ => Err(schema(ordinal, "coordinate is not a finite number")),
    }
}

fn parse_ring(v: &Value, ordinal: usize, ring: usize) -> Result<Ring, AnnotationError> {
    let arr = v
        .as_array()
        .ok_or_else(|| schema(ordinal, "ring is not an array"))?;
    let mut pts = arr
        .iter()
        .map(|p| parse_point(p, ordinal))
        .collect::<Result<Vec<_>, _>>()?;
    if pts.len() > 1 && pts.first() == pts.last() {
        pts.pop();
    }
    if pts.len() < 3 {
        return Err(AnnotationError::DegenerateRing { ordinal, ring });
    }
    Ok(pts)
}

fn parse_geometry(v: &Value, ordinal: usize) -> Result<Geometry, AnnotationError> {
    let kind = v
        .get("type")
        .and_then(Value::as_str)
        .ok_or_else(|| schema(ordinal, "geometry has no type"))?;
    let coords = v
        .get("coordinates")
        .ok_or_else(|| schema(ordinal, "geometry has no coordinates"))?;
    match kind {
        "Point" => Ok(Geometry::Point(parse_point(coords, ordinal)?)),
        "Polygon" => {
            let rings = coords
                .as_array()
                .filter(|r| !r.is_empty())
                .ok_or_else(|| schema(ordinal, "polygon has no rings"))?;
            let mut parsed = rings
                .iter()
                .enumerate()
                .map(|(i, r)| parse_ring(r, ordinal, i))
                .collect::<Result<Vec<_>, _>>()?;
            let outer = parsed.remove(0);
            Ok(Geometry::Polygon {
                outer,
                holes: parsed,
            })
        }
        other => Err(schema(
            ordinal,
            format!("unsupported geometry type `{other}`"),
        )),
    }
}

/// Parses an annotation file. `dims` is `(width, height)` of the case image.
pub fn parse_annotation_file(
    content: &[u8],
    taxonomy: &Taxonomy,
    layer: Layer,
    case_id: &str,
    dims: Option<(u32, u32)>,
) -> Result<AnnotationSet, AnnotationError> {
    let (width, height) = match dims {
        Some((w, h)) if w > 0 && h > 0 => (w, h),
        _ => return Err(AnnotationError::MissingDimensions(case_id.to_string())),
    };
    let root: Value = serde_json::from_slice(content)
        .map_err(|e| AnnotationError::MalformedJson(e.to_string()))?;
    if root.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(AnnotationError::MalformedJson(
            "top-level object is not a FeatureCollection".into(),
        ));
    }
    let features = root
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| AnnotationError::MalformedJson("`features` is not an array".into()))?;

    let mut set = AnnotationSet::new(case_id, width, height);
    for (ordinal, feature) in features.iter().enumerate() {
        let name = feature
            .pointer("/properties/classification/name")
            .and_then(Value::as_str)
            .ok_or_else(|| schema(ordinal, "missing properties.classification.name"))?;
        let class_index =
            taxonomy
                .index_of(name)
                .ok_or_else(|| AnnotationError::UnknownClassName {
                    name: name.to_string(),
                    ordinal,
                })?;
        let geometry = parse_geometry(
            feature
                .get("geometry")
                .ok_or_else(|| schema(ordinal, "missing geometry"))?,
            ordinal,
        )?;
        if layer == Layer::Tissue && matches!(geometry, Geometry::Point(_)) {
            return Err(AnnotationError::PointOnTissueLayer { ordinal });
        }
        set.annotations.push(Annotation {
            geometry,
            class_index,
            layer,
        });
    }
    Ok(set)
}

fn point_json(p: &Point) -> Value {
    json!([p.x, p.y])
}

/// Serializes a set back into the FeatureCollection format (compact, one line).
///
/// Class indices not in `taxonomy` are written under the name `"class_<index>"`.
pub fn write_annotation_file(set: &AnnotationSet, taxonomy: &Taxonomy) -> String {
    let features: Vec<Value> = set
        .annotations
        .iter()
        .map(|a| {
            let name = taxonomy
                .class_name(a.class_index)
                .map(str::to_string)
                .unwrap_or_else(|| format!("class_{}", a.class_index));
            let geometry = match &a.geometry {
                Geometry::Point(p) => json!({"type": "Point", "coordinates": point_json(p)}),
                Geometry::Polygon { outer, holes } => {
                    let rings: Vec<Value> = std::iter::once(outer)
                        .chain(holes)
                        .map(|r| {
                            // emit closed rings, as GeoJSON writers do
                            let mut pts: Vec<Value> = r.iter().map(point_json).collect();
                            pts.push(point_json(&r[0]));
                            Value::Array(pts)
                        })
                        .collect();
                    json!({"type": "Polygon", "coordinates": rings})
                }
            };
            json!({
                "type": "Feature",
                "geometry": geometry,
                "properties": {"classification": {"name": name}},
            })
        })
        .collect();
    let root = json!({"type": "FeatureCollection", "features": features});
    let mut out = serde_json::to_string(&root).expect("serializable");
    out.push('\n');
    out
}

/// Relabels every annotation through `mapping`. Geometry and order are kept.
pub fn map_taxonomy(
    set: &AnnotationSet,
    mapping: &TaxonomyMapping,
) -> Result<AnnotationSet, AnnotationError> {
    let annotations = set
        .annotations
        .iter()
        .enumerate()
        .map(|(ordinal, a)| {
            let class_index =
                mapping
                    .apply(a.class_index)
                    .ok_or(AnnotationError::ClassNotInMapping {
                        ordinal,
                        class_index: a.class_index,
                    })?;
            Ok(Annotation {
                class_index,
                ..a.clone()
            })
        })
        .collect::<Result<Vec<_>, AnnotationError>>()?;
    Ok(AnnotationSet {
        annotations,
        ..set.clone()
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum Issue {
    OutOfBounds {
        annotation: usize,
        ring: Option<usize>,
        vertex: usize,
        point: Point,
    },
    SelfIntersecting {
        annotation: usize,
        ring: usize,
    },
    ZeroArea {
        annotation: usize,
        ring: usize,
    },
    InvalidClass {
        annotation: usize,
        class_index: ClassIndex,
    },
}

/// Area below which a ring is reported as degenerate.
const ZERO_AREA_EPS: f64 = 1e-9;

fn in_bounds(p: &Point, width: u32, height: u32) -> bool {
    p.x >= 0.0 && p.y >= 0.0 && p.x <= width as f64 && p.y <= height as f64
}

fn orient(a: Point, b: Point, c: Point) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

fn on_segment(a: Point, b: Point, p: Point) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

fn segments_intersect(a: Point, b: Point, c: Point, d: Point) -> bool {
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(c, d, a))
        || (d2 == 0.0 && on_segment(c, d, b))
        || (d3 == 0.0 && on_segment(a, b, c))
        || (d4 == 0.0 && on_segment(a, b, d))
}

/// True when two non-adjacent edges of the ring touch or cross.
pub fn ring_self_intersects(ring: &[Point]) -> bool {
    let n = ring.len();
    if n < 4 {
        return false;
    }
    for i in 0..n {
        let (a, b) = (ring[i], ring[(i + 1) % n]);
        for j in (i + 2)..n {
            if i == 0 && j == n - 1 {
                continue;
            }
            let (c, d) = (ring[j], ring[(j + 1) % n]);
            if segments_intersect(a, b, c, d) {
                return true;
            }
        }
    }
    false
}

/// Diagnoses bounds, class validity, self-intersection and zero-area rings.
pub fn validate(set: &AnnotationSet, taxonomy: &Taxonomy) -> Vec<Issue> {
    let mut issues = Vec::new();
    for (ai, a) in set.annotations.iter().enumerate() {
        if !taxonomy.contains(a.class_index) {
            issues.push(Issue::InvalidClass {
                annotation: ai,
                class_index: a.class_index,
            });
        }
        match &a.geometry {
            Geometry::Point(p) => {
                if !in_bounds(p, set.width, set.height) {
                    issues.push(Issue::OutOfBounds {
                        annotation: ai,
                        ring: None,
                        vertex: 0,
                        point: *p,
                    });
                }
            }
            geometry => {
                for (ri, ring) in geometry.rings().enumerate() {
                    for (vi, p) in ring.iter().enumerate() {
                        if !in_bounds(p, set.width, set.height) {
                            issues.push(Issue::OutOfBounds {
                                annotation: ai,
                                ring: Some(ri),
                                vertex: vi,
                                point: *p,
                            });
                        }
                    }
                    if signed_area(ring).abs() <= ZERO_AREA_EPS {
                        issues.push(Issue::ZeroArea {
                            annotation: ai,
                            ring: ri,
                        });
                    } else if ring_self_intersects(ring) {
                        issues.push(Issue::SelfIntersecting {
                            annotation: ai,
                            ring: ri,
                        });
                    }
                }
            }
        }
    }
    issues
}
