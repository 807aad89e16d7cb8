//! On-disk layout of ground-truth and prediction directories.
//!
//! ```text
//! <root>/tissue/<case_id>.json   tissue polygons, or
//! <root>/tissue/<case_id>.png    indexed label mask
//! <root>/nuclei/<case_id>.json   nuclei polygons and/or points
//! <root>/dims.csv                optional `case_id,width,height`
//! ```
//!
//! Cases are identified by file stem. A case found on only one side is a
//! per-case failure, never a fatal error.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotations::{parse_annotation_file, AnnotationError, Layer};
use crate::evaluate::{CaseData, CaseFailure};
use crate::mask_io::{read_mask, MaskIoError};
use crate::raster::{
    nuclei_from_annotations, nuclei_via_mask, rasterize, Connectivity, LabelMask, NucleiSet,
    RasterError,
};
use crate::taxonomy::Taxonomy;

pub const TISSUE_DIR: &str = "tissue";
pub const NUCLEI_DIR: &str = "nuclei";
pub const DIMS_FILE: &str = "dims.csv";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Annotation {
        path: PathBuf,
        source: AnnotationError,
    },
    #[error("{path}: {source}")]
    Mask { path: PathBuf, source: MaskIoError },
    #[error("{path}: {source}")]
    Raster { path: PathBuf, source: RasterError },
    #[error("{path}: {reason}")]
    Dims { path: PathBuf, reason: String },
    #[error("case `{case_id}`: {reason}")]
    Case { case_id: String, reason: String },
}

/// How nuclei annotations become detection points.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NucleiRoute {
    /// Each annotation reduces to its own centroid.
    #[default]
    Geometry,
    /// Polygons are rasterized, split into connected components and reduced
    /// to pixel centroids; points pass through.
    Mask,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Reads `case_id,width,height` rows (header optional).
pub fn read_dims(path: &Path) -> Result<BTreeMap<String, (u32, u32)>, DatasetError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let bad = |reason: String| DatasetError::Dims {
        path: path.to_path_buf(),
        reason,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut out = BTreeMap::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| bad(e.to_string()))?;
        if i == 0
            && row
                .get(0)
                .is_some_and(|s| s.eq_ignore_ascii_case("case_id"))
        {
            continue;
        }
        if row.len() < 3 {
            return Err(bad(format!("row {} needs case_id,width,height", i + 1)));
        }
        let parse = |s: &str| {
            s.parse::<u32>()
                .ok()
                .filter(|&v| v > 0)
                .ok_or_else(|| bad(format!("row {}: `{s}` is not a positive integer", i + 1)))
        };
        out.insert(row[0].to_string(), (parse(&row[1])?, parse(&row[2])?));
    }
    Ok(out)
}

pub fn write_dims(dims: &BTreeMap<String, (u32, u32)>) -> String {
    let mut s = String::from("case_id,width,height\n");
    for (id, (w, h)) in dims {
        s.push_str(&format!("{id},{w},{h}\n"));
    }
    s
}

/// Image dimensions by case, with a fallback for unlisted cases.
#[derive(Debug, Clone)]
pub struct Dimensions {
    pub listed: BTreeMap<String, (u32, u32)>,
    pub default: Option<(u32, u32)>,
}

impl Dimensions {
    /// Merges `dims.csv` from each root (earlier roots win) over `default`.
    pub fn discover(roots: &[&Path], default: Option<(u32, u32)>) -> Result<Self, DatasetError> {
        let mut listed = BTreeMap::new();
        for root in roots.iter().rev() {
            let p = root.join(DIMS_FILE);
            if p.is_file() {
                listed.extend(read_dims(&p)?);
            }
        }
        Ok(Self { listed, default })
    }

    pub fn get(&self, case_id: &str) -> Option<(u32, u32)> {
        self.listed.get(case_id).copied().or(self.default)
    }
}

fn stems(dir: &Path, extensions: &[&str]) -> Result<BTreeSet<String>, DatasetError> {
    let mut out = BTreeSet::new();
    if !dir.is_dir() {
        return Ok(out);
    }
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        if path.is_file() && extensions.contains(&ext) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.insert(stem.to_string());
            }
        }
    }
    Ok(out)
}

pub fn tissue_cases(root: &Path) -> Result<BTreeSet<String>, DatasetError> {
    stems(&root.join(TISSUE_DIR), &["json", "png"])
}

pub fn nuclei_cases(root: &Path) -> Result<BTreeSet<String>, DatasetError> {
    stems(&root.join(NUCLEI_DIR), &["json"])
}

/// Loads a tissue mask: the PNG if present, else the rasterized JSON.
pub fn load_tissue(
    root: &Path,
    case_id: &str,
    taxonomy: &Taxonomy,
    dims: &Dimensions,
) -> Result<LabelMask, DatasetError> {
    let png = root.join(TISSUE_DIR).join(format!("{case_id}.png"));
    if png.is_file() {
        let bytes = fs::read(&png).map_err(io_err(&png))?;
        return read_mask(&bytes).map_err(|source| DatasetError::Mask { path: png, source });
    }
    let json = root.join(TISSUE_DIR).join(format!("{case_id}.json"));
    let bytes = fs::read(&json).map_err(io_err(&json))?;
    let set = parse_annotation_file(&bytes, taxonomy, Layer::Tissue, case_id, dims.get(case_id))
        .map_err(|source| DatasetError::Annotation {
            path: json.clone(),
            source,
        })?;
    rasterize(&set).map_err(|source| DatasetError::Raster { path: json, source })
}

/// Parses nuclei JSON content into detection points.
pub fn nuclei_from_json(
    content: &[u8],
    case_id: &str,
    taxonomy: &Taxonomy,
    dims: Option<(u32, u32)>,
    route: NucleiRoute,
    connectivity: Connectivity,
) -> Result<NucleiSet, DatasetError> {
    let path = PathBuf::from(format!("{case_id}.json"));
    let set = parse_annotation_file(content, taxonomy, Layer::Nuclei, case_id, dims).map_err(
        |source| DatasetError::Annotation {
            path: path.clone(),
            source,
        },
    )?;
    match route {
        NucleiRoute::Geometry => Ok(nuclei_from_annotations(&set)),
        NucleiRoute::Mask => nuclei_via_mask(&set, connectivity)
            .map_err(|source| DatasetError::Raster { path, source }),
    }
}

pub fn load_nuclei(
    root: &Path,
    case_id: &str,
    taxonomy: &Taxonomy,
    dims: &Dimensions,
    route: NucleiRoute,
    connectivity: Connectivity,
) -> Result<NucleiSet, DatasetError> {
    let path = root.join(NUCLEI_DIR).join(format!("{case_id}.json"));
    let bytes = fs::read(&path).map_err(io_err(&path))?;
    nuclei_from_json(
        &bytes,
        case_id,
        taxonomy,
        dims.get(case_id),
        route,
        connectivity,
    )
    .map_err(|e| match e {
        DatasetError::Annotation { source, .. } => DatasetError::Annotation { path, source },
        DatasetError::Raster { source, .. } => DatasetError::Raster { path, source },
        other => other,
    })
}

/// Which layers to pair up.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layers {
    pub tissue: bool,
    pub nuclei: bool,
}

pub struct PairingOptions<'a> {
    pub tissue_taxonomy: &'a Taxonomy,
    pub nuclei_taxonomy: &'a Taxonomy,
    pub dims: &'a Dimensions,
    pub route: NucleiRoute,
    pub connectivity: Connectivity,
    pub layers: Layers,
}

/// Loads every case present in either directory. Cases missing on one side
/// or failing to load are returned as failures; the rest are paired.
pub fn pair_dirs(
    gt_root: &Path,
    pred_root: &Path,
    opts: &PairingOptions<'_>,
) -> Result<(Vec<CaseData>, Vec<CaseFailure>), DatasetError> {
    let mut all = BTreeSet::new();
    let (gt_t, pred_t, gt_n, pred_n) = (
        tissue_cases(gt_root)?,
        tissue_cases(pred_root)?,
        nuclei_cases(gt_root)?,
        nuclei_cases(pred_root)?,
    );
    if opts.layers.tissue {
        all.extend(gt_t.iter().cloned());
        all.extend(pred_t.iter().cloned());
    }
    if opts.layers.nuclei {
        all.extend(gt_n.iter().cloned());
        all.extend(pred_n.iter().cloned());
    }

    let mut cases = Vec::new();
    let mut failures = Vec::new();
    for id in all {
        let load = || -> Result<CaseData, String> {
            let tissue = if opts.layers.tissue {
                match (gt_t.contains(&id), pred_t.contains(&id)) {
                    (true, true) => Some((
                        load_tissue(pred_root, &id, opts.tissue_taxonomy, opts.dims)
                            .map_err(|e| e.to_string())?,
                        load_tissue(gt_root, &id, opts.tissue_taxonomy, opts.dims)
                            .map_err(|e| e.to_string())?,
                    )),
                    (false, false) => None,
                    (gt, _) => {
                        return Err(format!(
                            "tissue {} missing",
                            if gt { "prediction" } else { "ground truth" }
                        ))
                    }
                }
            } else {
                None
            };
            let nuclei = if opts.layers.nuclei {
                match (gt_n.contains(&id), pred_n.contains(&id)) {
                    (true, true) => {
                        let load = |root: &Path| {
                            load_nuclei(
                                root,
                                &id,
                                opts.nuclei_taxonomy,
                                opts.dims,
                                opts.route,
                                opts.connectivity,
                            )
                            .map_err(|e| e.to_string())
                        };
                        Some((load(pred_root)?, load(gt_root)?))
                    }
                    (false, false) => None,
                    (gt, _) => {
                        return Err(format!(
                            "nuclei {} missing",
                            if gt { "prediction" } else { "ground truth" }
                        ))
                    }
                }
            } else {
                None
            };
            Ok(CaseData {
                case_id: id.clone(),
                tissue,
                nuclei,
            })
        };
        match load() {
            Ok(c) => cases.push(c),
            Err(reason) => failures.push(CaseFailure {
                case_id: id.clone(),
                reason,
            }),
        }
    }
    Ok((cases, failures))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dims_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut dims = BTreeMap::new();
        dims.insert("a".to_string(), (1024, 1024));
        dims.insert("b".to_string(), (64, 32));
        let p = dir.path().join(DIMS_FILE);
        fs::write(&p, write_dims(&dims)).unwrap();
        assert_eq!(read_dims(&p).unwrap(), dims);
    }

    #[test]
    fn dims_reject_zero() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(DIMS_FILE);
        fs::write(&p, "a,0,4\n").unwrap();
        assert!(matches!(read_dims(&p), Err(DatasetError::Dims { .. })));
    }

    #[test]
    fn missing_side_is_a_case_failure() {
        let gt = tempfile::tempdir().unwrap();
        let pred = tempfile::tempdir().unwrap();
        let empty = r#"{"type":"FeatureCollection","features":[]}"#;
        for root in [gt.path(), pred.path()] {
            fs::create_dir_all(root.join(NUCLEI_DIR)).unwrap();
            fs::write(root.join(NUCLEI_DIR).join("both.json"), empty).unwrap();
        }
        fs::write(gt.path().join(NUCLEI_DIR).join("gt_only.json"), empty).unwrap();
        let tissue = Taxonomy::tissue();
        let t1 = Taxonomy::track1();
        let dims = Dimensions {
            listed: BTreeMap::new(),
            default: Some((64, 64)),
        };
        let opts = PairingOptions {
            tissue_taxonomy: &tissue,
            nuclei_taxonomy: &t1,
            dims: &dims,
            route: NucleiRoute::Geometry,
            connectivity: Connectivity::Eight,
            layers: Layers {
                tissue: true,
                nuclei: true,
            },
        };
        let (cases, failures) = pair_dirs(gt.path(), pred.path(), &opts).unwrap();
        assert_eq!(cases.len(), 1);
        assert_eq!(cases[0].case_id, "both");
        assert!(cases[0].tissue.is_none());
        assert_eq!(failures.len(), 1);
        assert_eq!(failures[0].case_id, "gt_only");
        assert!(failures[0].reason.contains("prediction missing"));
    }
}
