//! Class taxonomies for the tissue layer and both nuclei tracks.
//!
//! Index 0 is always background; classes are numbered contiguously from 1.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Pixel / annotation class identifier. `0` is background.
pub type ClassIndex = u16;

pub const BACKGROUND: ClassIndex = 0;

/// Class indices must fit an 8-bit palette.
pub const MAX_CLASSES: usize = 255;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TaxonomyError {
    #[error("taxonomy `{0}` has no classes")]
    Empty(String),
    #[error("taxonomy has an empty class name at position {0}")]
    EmptyClassName(usize),
    #[error("duplicate class name `{0}`")]
    DuplicateClassName(String),
    #[error("taxonomy has {0} classes, at most {MAX_CLASSES} fit an 8-bit mask")]
    TooManyClasses(usize),
    #[error("mapping is not total: source class `{0}` has no target")]
    NotTotal(String),
    #[error("mapping target index {0} is not a class of the target taxonomy")]
    InvalidTarget(ClassIndex),
}

fn normalize(name: &str) -> String {
    name.trim().to_lowercase()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Taxonomy {
    name: String,
    classes: Vec<String>,
}

impl Taxonomy {
    /// Builds a taxonomy from class names; class `i` of the slice gets index `i + 1`.
    pub fn new<S: AsRef<str>>(name: &str, classes: &[S]) -> Result<Self, TaxonomyError> {
        if classes.is_empty() {
            return Err(TaxonomyError::Empty(name.to_string()));
        }
        if classes.len() > MAX_CLASSES {
            return Err(TaxonomyError::TooManyClasses(classes.len()));
        }
        let mut normalized: Vec<String> = Vec::with_capacity(classes.len());
        for (pos, class) in classes.iter().enumerate() {
            let n = normalize(class.as_ref());
            if n.is_empty() {
                return Err(TaxonomyError::EmptyClassName(pos));
            }
            if normalized.contains(&n) {
                return Err(TaxonomyError::DuplicateClassName(n));
            }
            normalized.push(n);
        }
        Ok(Self {
            name: name.to_string(),
            classes: normalized,
        })
    }

    /// Tumor, stroma, necrosis, epidermis, blood vessel.
    pub fn tissue() -> Self {
        Self::new(
            "tissue",
            &["tumor", "stroma", "necrosis", "epidermis", "blood vessel"],
        )
        .expect("built-in taxonomy")
    }

    /// Track 1 nuclei: tumor cells, TILs, other cells.
    pub fn track1() -> Self {
        Self::new("track1", &["tumor", "tils", "other"]).expect("built-in taxonomy")
    }

    /// Track 2 nuclei with the nine published subcategories.
    pub fn track2() -> Self {
        Self::new("track2", &TRACK2_CLASSES).expect("built-in taxonomy")
    }

    /// Track 2 extended by a caller-supplied tenth class.
    pub fn track2_with_extra(extra: &str) -> Result<Self, TaxonomyError> {
        let mut classes: Vec<&str> = TRACK2_CLASSES.to_vec();
        classes.push(extra);
        Self::new("track2", &classes)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    /// Iterates `(index, name)` in taxonomy order.
    pub fn classes(&self) -> impl Iterator<Item = (ClassIndex, &str)> + '_ {
        self.classes
            .iter()
            .enumerate()
            .map(|(i, n)| ((i + 1) as ClassIndex, n.as_str()))
    }

    pub fn indices(&self) -> impl Iterator<Item = ClassIndex> {
        1..=(self.classes.len() as ClassIndex)
    }

    pub fn contains(&self, index: ClassIndex) -> bool {
        index >= 1 && (index as usize) <= self.classes.len()
    }

    pub fn class_name(&self, index: ClassIndex) -> Option<&str> {
        if self.contains(index) {
            Some(&self.classes[index as usize - 1])
        } else {
            None
        }
    }

    /// Case-insensitive, whitespace-trimmed lookup.
    pub fn index_of(&self, name: &str) -> Option<ClassIndex> {
        let n = normalize(name);
        self.classes
            .iter()
            .position(|c| *c == n)
            .map(|p| (p + 1) as ClassIndex)
    }
}

const TRACK2_CLASSES: [&str; 9] = [
    "tumor",
    "lymphocytes",
    "plasma",
    "histiocytes",
    "neutrophils",
    "stromal",
    "epithelium",
    "endothelium",
    "apoptotic",
];

/// Total map from the classes of one taxonomy onto another.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaxonomyMapping {
    source: Taxonomy,
    target: Taxonomy,
    // map[i] is the target of source class i + 1
    map: Vec<ClassIndex>,
}

impl TaxonomyMapping {
    pub fn new(
        source: Taxonomy,
        target: Taxonomy,
        map: Vec<ClassIndex>,
    ) -> Result<Self, TaxonomyError> {
        if map.len() != source.len() {
            let missing = source
                .class_name((map.len().min(source.len()) + 1) as ClassIndex)
                .unwrap_or("?")
                .to_string();
            return Err(TaxonomyError::NotTotal(missing));
        }
        if let Some(&bad) = map.iter().find(|&&t| !target.contains(t)) {
            return Err(TaxonomyError::InvalidTarget(bad));
        }
        Ok(Self {
            source,
            target,
            map,
        })
    }

    /// Builds a mapping from `(source name, target name)` pairs.
    pub fn from_names(
        source: Taxonomy,
        target: Taxonomy,
        pairs: &[(&str, &str)],
    ) -> Result<Self, TaxonomyError> {
        let mut map = Vec::with_capacity(source.len());
        for (_, name) in source.classes() {
            let target_name = pairs
                .iter()
                .find(|(s, _)| normalize(s) == name)
                .map(|(_, t)| *t)
                .ok_or_else(|| TaxonomyError::NotTotal(name.to_string()))?;
            let idx = target
                .index_of(target_name)
                .ok_or_else(|| TaxonomyError::NotTotal(name.to_string()))?;
            map.push(idx);
        }
        Self::new(source, target, map)
    }

    pub fn identity(taxonomy: Taxonomy) -> Self {
        let map = taxonomy.indices().collect();
        Self {
            source: taxonomy.clone(),
            target: taxonomy,
            map,
        }
    }

    /// Subcategory to supercategory grouping of the nuclei tracks.
    pub fn track2_to_track1() -> Self {
        Self::track2_source_to_track1(Taxonomy::track2(), None).expect("built-in mapping")
    }

    /// Same grouping for a Track 2 taxonomy with an extra class, which maps
    /// onto `extra_target` (a Track 1 class name).
    pub fn track2_source_to_track1(
        source: Taxonomy,
        extra_target: Option<&str>,
    ) -> Result<Self, TaxonomyError> {
        let mut pairs: Vec<(&str, &str)> = vec![
            ("tumor", "tumor"),
            ("lymphocytes", "tils"),
            ("plasma", "tils"),
            ("histiocytes", "other"),
            ("neutrophils", "other"),
            ("stromal", "other"),
            ("epithelium", "other"),
            ("endothelium", "other"),
            ("apoptotic", "other"),
        ];
        let extra_name = source.class_name(10).map(str::to_string);
        if let (Some(extra), Some(target)) = (extra_name.as_deref(), extra_target) {
            pairs.push((extra, target));
        }
        Self::from_names(source, Taxonomy::track1(), &pairs)
    }

    pub fn source(&self) -> &Taxonomy {
        &self.source
    }

    pub fn target(&self) -> &Taxonomy {
        &self.target
    }

    pub fn apply(&self, index: ClassIndex) -> Option<ClassIndex> {
        if self.source.contains(index) {
            Some(self.map[index as usize - 1])
        } else {
            None
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_have_expected_sizes() {
        assert_eq!(Taxonomy::tissue().len(), 5);
        assert_eq!(Taxonomy::track1().len(), 3);
        assert_eq!(Taxonomy::track2().len(), 9);
        assert_eq!(
            Taxonomy::track2_with_extra("Melanophage").unwrap().len(),
            10
        );
    }

    #[test]
    fn indices_start_at_one() {
        let t = Taxonomy::track1();
        let v: Vec<_> = t.classes().collect();
        assert_eq!(v, vec![(1, "tumor"), (2, "tils"), (3, "other")]);
        assert!(!t.contains(0));
        assert!(!t.contains(4));
    }

    #[test]
    fn lookup_is_case_insensitive_and_trimmed() {
        let t = Taxonomy::track1();
        assert_eq!(t.index_of("TILs"), Some(2));
        assert_eq!(t.index_of("  Tumor "), Some(1));
        assert_eq!(t.index_of("melanocyte"), None);
    }

    #[test]
    fn rejects_bad_class_lists() {
        assert!(matches!(
            Taxonomy::new("x", &["a", "A"]),
            Err(TaxonomyError::DuplicateClassName(_))
        ));
        assert!(matches!(
            Taxonomy::new("x", &["a", " "]),
            Err(TaxonomyError::EmptyClassName(1))
        ));
        assert!(matches!(
            Taxonomy::new::<&str>("x", &[]),
            Err(TaxonomyError::Empty(_))
        ));
        assert!(Taxonomy::track2_with_extra("tumor").is_err());
    }

    #[test]
    fn default_mapping_follows_supercategories() {
        let m = TaxonomyMapping::track2_to_track1();
        let s = m.source();
        let t = m.target();
        let target_of = |n: &str| {
            t.class_name(m.apply(s.index_of(n).unwrap()).unwrap())
                .unwrap()
        };
        assert_eq!(target_of("tumor"), "tumor");
        assert_eq!(target_of("lymphocytes"), "tils");
        assert_eq!(target_of("plasma"), "tils");
        for n in [
            "histiocytes",
            "neutrophils",
            "stromal",
            "epithelium",
            "endothelium",
            "apoptotic",
        ] {
            assert_eq!(target_of(n), "other");
        }
    }

    #[test]
    fn default_mapping_is_surjective() {
        let m = TaxonomyMapping::track2_to_track1();
        let mut hit = [false; 3];
        for i in m.source().indices() {
            hit[m.apply(i).unwrap() as usize - 1] = true;
        }
        assert!(hit.iter().all(|&h| h));
    }

    #[test]
    fn extra_class_requires_target() {
        let src = Taxonomy::track2_with_extra("melanophage").unwrap();
        assert!(matches!(
            TaxonomyMapping::track2_source_to_track1(src.clone(), None),
            Err(TaxonomyError::NotTotal(n)) if n == "melanophage"
        ));
        let m = TaxonomyMapping::track2_source_to_track1(src, Some("Other")).unwrap();
        assert_eq!(m.apply(10), Some(3));
    }

    #[test]
    fn mapping_rejects_invalid_target() {
        let r = TaxonomyMapping::new(Taxonomy::track1(), Taxonomy::track1(), vec![1, 2, 4]);
        assert_eq!(r, Err(TaxonomyError::InvalidTarget(4)));
    }
}
