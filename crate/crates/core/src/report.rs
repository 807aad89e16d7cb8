//! Challenge-style reports: per-class tissue Dice and nuclei F1 with macro
//! averages, an optional supercategory view, and the parameters that
//! produced them.
//!
//! JSON output is canonical: object keys sorted, floats written with six
//! significant digits, every score paired with a three-decimal display string.

use std::io;

use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};
use thiserror::Error;

use crate::metrics::{
    macro_average, AbsentPolicy, ClassCounts, DetectionSummary, DiceMode, DiceSummary,
    MatchStrategy,
};
use crate::raster::Connectivity;
use crate::taxonomy::{Taxonomy, TaxonomyMapping};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Track {
    Track1,
    Track2,
}

impl Track {
    pub fn label(&self) -> &'static str {
        match self {
            Track::Track1 => "Track 1",
            Track::Track2 => "Track 2",
        }
    }
}

/// A metric value with its three-decimal display form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub value: f64,
    pub display: String,
}

impl Score {
    pub fn new(value: f64) -> Self {
        Self {
            value,
            display: format!("{value:.3}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TissueClass {
    pub index: u16,
    pub name: String,
    /// `null` when the class never occurred and absent classes are skipped.
    pub dice: Option<Score>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TissueSection {
    pub classes: Vec<TissueClass>,
    pub macro_dice: Option<Score>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NucleiClass {
    pub index: u16,
    pub name: String,
    pub f1: Score,
    pub precision: Option<Score>,
    pub recall: Option<Score>,
    pub counts: Option<ClassCounts>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NucleiSection {
    pub taxonomy: String,
    pub classes: Vec<NucleiClass>,
    pub macro_f1: Score,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub radius: f64,
    pub strategy: MatchStrategy,
    pub dice_mode: DiceMode,
    pub absent_policy: AbsentPolicy,
    pub connectivity: Connectivity,
    pub seed: Option<u64>,
    pub case_count: usize,
    pub failed_cases: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChallengeReport {
    pub schema_version: u32,
    pub track: Track,
    pub tissue: TissueSection,
    pub nuclei: NucleiSection,
    /// Nuclei counts pooled through the subcategory → supercategory mapping.
    pub supercategories: Option<NucleiSection>,
    pub config: ConfigEcho,
}

#[derive(Debug, Error, PartialEq)]
pub enum ReportError {
    #[error("{what}: {got} per-class values for a taxonomy of {expected} classes")]
    TaxonomyMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("the mapping source taxonomy `{0}` is not the nuclei taxonomy")]
    MappingSource(String),
    #[error("supercategory view needs per-class counts, class `{0}` has none")]
    MissingCounts(String),
    #[error("report JSON: {0}")]
    Parse(String),
}

fn nuclei_section(summary: &DetectionSummary, taxonomy: &Taxonomy) -> NucleiSection {
    NucleiSection {
        taxonomy: taxonomy.name().to_string(),
        classes: taxonomy
            .classes()
            .zip(&summary.per_class)
            .map(|((index, name), c)| NucleiClass {
                index,
                name: name.to_string(),
                f1: Score::new(c.f1),
                precision: c.precision.map(Score::new),
                recall: c.recall.map(Score::new),
                counts: c.counts,
            })
            .collect(),
        macro_f1: Score::new(summary.macro_f1),
    }
}

/// Pools per-class counts through `mapping` onto its target classes.
fn supercategory_summary(
    summary: &DetectionSummary,
    mapping: &TaxonomyMapping,
) -> Result<DetectionSummary, ReportError> {
    let source = mapping.source();
    let mut pooled = crate::metrics::DetectionCounts::zeros(mapping.target().len());
    for ((index, name), c) in source.classes().zip(&summary.per_class) {
        let counts = c
            .counts
            .ok_or_else(|| ReportError::MissingCounts(name.to_string()))?;
        let target = mapping.apply(index).expect("total mapping");
        pooled.per_class[target as usize - 1].add(&counts);
    }
    Ok(DetectionSummary::from_counts(&pooled))
}

#[allow(clippy::too_many_arguments)]
pub fn build_report(
    track: Track,
    tissue: &DiceSummary,
    tissue_taxonomy: &Taxonomy,
    nuclei: &DetectionSummary,
    nuclei_taxonomy: &Taxonomy,
    mapping: Option<&TaxonomyMapping>,
    config: ConfigEcho,
) -> Result<ChallengeReport, ReportError> {
    if tissue.per_class.len() != tissue_taxonomy.len() {
        return Err(ReportError::TaxonomyMismatch {
            what: "tissue",
            expected: tissue_taxonomy.len(),
            got: tissue.per_class.len(),
        });
    }
    if nuclei.per_class.len() != nuclei_taxonomy.len() {
        return Err(ReportError::TaxonomyMismatch {
            what: "nuclei",
            expected: nuclei_taxonomy.len(),
            got: nuclei.per_class.len(),
        });
    }
    let tissue_section = TissueSection {
        classes: tissue_taxonomy
            .classes()
            .zip(&tissue.per_class)
            .map(|((index, name), d)| TissueClass {
                index,
                name: name.to_string(),
                dice: d.map(Score::new),
            })
            .collect(),
        // recomputed from the listed values so the two always agree
        macro_dice: macro_average(tissue.per_class.iter().copied()).map(Score::new),
    };
    let supercategories = match mapping {
        Some(m) => {
            if m.source() != nuclei_taxonomy {
                return Err(ReportError::MappingSource(m.source().name().to_string()));
            }
            Some(nuclei_section(
                &supercategory_summary(nuclei, m)?,
                m.target(),
            ))
        }
        None => None,
    };
    Ok(ChallengeReport {
        schema_version: SCHEMA_VERSION,
        track,
        tissue: tissue_section,
        nuclei: nuclei_section(nuclei, nuclei_taxonomy),
        supercategories,
        config,
    })
}

/// Six significant digits, positional for exponents in `-5..6`.
pub fn format_sig6(v: f64) -> String {
    if !v.is_finite() {
        return "null".to_string();
    }
    if v == 0.0 {
        return "0.00000".to_string();
    }
    let sci = format!("{v:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("exponent");
    if !(-5..6).contains(&exp) {
        return sci;
    }
    let negative = mantissa.starts_with('-');
    let digits: String = mantissa.chars().filter(char::is_ascii_digit).collect();
    let mut out = String::new();
    if negative {
        out.push('-');
    }
    if exp >= 0 {
        let split = exp as usize + 1;
        out.push_str(&digits[..split]);
        out.push('.');
        if split < digits.len() {
            out.push_str(&digits[split..]);
        } else {
            out.push('0');
        }
    } else {
        out.push_str("0.");
        out.push_str(&"0".repeat((-exp - 1) as usize));
        out.push_str(&digits);
    }
    out
}

/// Pretty JSON with floats in [`format_sig6`] form.
struct CanonicalFormatter<'a> {
    inner: PrettyFormatter<'a>,
}

impl Formatter for CanonicalFormatter<'_> {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        w.write_all(format_sig6(value).as_bytes())
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, value as f64)
    }

    fn begin_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.begin_array(w)
    }

    fn end_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_array(w)
    }

    fn begin_array_value<W: ?Sized + io::Write>(
        &mut self,
        w: &mut W,
        first: bool,
    ) -> io::Result<()> {
        self.inner.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_array_value(w)
    }

    fn begin_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.begin_object(w)
    }

    fn end_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_object(w)
    }

    fn begin_object_key<W: ?Sized + io::Write>(
        &mut self,
        w: &mut W,
        first: bool,
    ) -> io::Result<()> {
        self.inner.begin_object_key(w, first)
    }

    fn end_object_key<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_object_key(w)
    }

    fn begin_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_object_value(w)
    }
}

/// Writes any serializable value as canonical JSON (sorted keys, sig-6 floats).
pub fn to_canonical_json<T: Serialize>(value: &T) -> String {
    // going through Value sorts object keys
    let tree = serde_json::to_value(value).expect("serializable");
    let mut out = Vec::new();
    let formatter = CanonicalFormatter {
        inner: PrettyFormatter::with_indent(b"  "),
    };
    let mut ser = serde_json::Serializer::with_formatter(&mut out, formatter);
    tree.serialize(&mut ser).expect("in-memory write");
    out.push(b'\n');
    String::from_utf8(out).expect("utf-8")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
    Table,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(Self::Json),
            "csv" => Ok(Self::Csv),
            "table" => Ok(Self::Table),
            other => Err(format!(
                "unknown report format `{other}` (json, csv, table)"
            )),
        }
    }
}

fn opt_sig6(s: &Option<Score>) -> String {
    s.as_ref().map(|s| format_sig6(s.value)).unwrap_or_default()
}

fn render_csv(report: &ChallengeReport) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let header = [
        "section",
        "index",
        "class",
        "dice",
        "precision",
        "recall",
        "f1",
        "tp",
        "fp",
        "fn",
    ];
    w.write_record(header).expect("in-memory");
    for c in &report.tissue.classes {
        w.write_record([
            "tissue",
            &c.index.to_string(),
            &c.name,
            &opt_sig6(&c.dice),
            "",
            "",
            "",
            "",
            "",
            "",
        ])
        .expect("in-memory");
    }
    w.write_record([
        "tissue",
        "",
        "average",
        &opt_sig6(&report.tissue.macro_dice),
        "",
        "",
        "",
        "",
        "",
        "",
    ])
    .expect("in-memory");
    for c in &report.nuclei.classes {
        let count = |f: fn(&ClassCounts) -> u64| c.counts.as_ref().map(|x| f(x).to_string());
        w.write_record([
            "nuclei",
            &c.index.to_string(),
            &c.name,
            "",
            &opt_sig6(&c.precision),
            &opt_sig6(&c.recall),
            &format_sig6(c.f1.value),
            &count(|x| x.tp).unwrap_or_default(),
            &count(|x| x.fp).unwrap_or_default(),
            &count(|x| x.fn_).unwrap_or_default(),
        ])
        .expect("in-memory");
    }
    w.write_record([
        "nuclei",
        "",
        "average",
        "",
        "",
        "",
        &format_sig6(report.nuclei.macro_f1.value),
        "",
        "",
        "",
    ])
    .expect("in-memory");
    w.into_inner().expect("in-memory")
}

fn display(s: &Option<Score>) -> &str {
    s.as_ref().map(|s| s.display.as_str()).unwrap_or("-")
}

fn render_nuclei_table(out: &mut String, title: &str, section: &NucleiSection) {
    let width = section
        .classes
        .iter()
        .map(|c| c.name.len())
        .max()
        .unwrap_or(0)
        .max("average".len());
    out.push_str(&format!(
        "{title}\n  {:<width$}  {:>9}  {:>6}  {:>5}  {:>6}  {:>6}  {:>6}\n",
        "class", "precision", "recall", "f1", "tp", "fp", "fn"
    ));
    for c in &section.classes {
        let (tp, fp, fn_) = match &c.counts {
            Some(k) => (k.tp.to_string(), k.fp.to_string(), k.fn_.to_string()),
            None => ("-".into(), "-".into(), "-".into()),
        };
        out.push_str(&format!(
            "  {:<width$}  {:>9}  {:>6}  {:>5}  {:>6}  {:>6}  {:>6}\n",
            c.name,
            display(&c.precision),
            display(&c.recall),
            c.f1.display,
            tp,
            fp,
            fn_
        ));
    }
    out.push_str(&format!(
        "  {:<width$}  {:>9}  {:>6}  {:>5}\n",
        "average", "", "", section.macro_f1.display
    ));
}

fn render_table(report: &ChallengeReport) -> Vec<u8> {
    let c = &report.config;
    let mut out = format!(
        "{}: {} cases ({} failed), radius {} px, {} matching, {} Dice ({} absent)\n\n",
        report.track.label(),
        c.case_count,
        c.failed_cases,
        format_sig6(c.radius),
        serde_plain(&c.strategy),
        serde_plain(&c.dice_mode),
        serde_plain(&c.absent_policy),
    );
    let width = report
        .tissue
        .classes
        .iter()
        .map(|c| c.name.len())
        .max()
        .unwrap_or(0)
        .max("average".len());
    out.push_str(&format!("Tissue\n  {:<width$}  {:>5}\n", "class", "dice"));
    for t in &report.tissue.classes {
        out.push_str(&format!("  {:<width$}  {:>5}\n", t.name, display(&t.dice)));
    }
    out.push_str(&format!(
        "  {:<width$}  {:>5}\n\n",
        "average",
        display(&report.tissue.macro_dice)
    ));
    render_nuclei_table(&mut out, "Nuclei", &report.nuclei);
    if let Some(sup) = &report.supercategories {
        out.push('\n');
        render_nuclei_table(&mut out, "Nuclei by supercategory", sup);
    }
    out.into_bytes()
}

fn serde_plain<T: Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        Ok(other) => other.to_string(),
        Err(_) => String::new(),
    }
}

pub fn render(report: &ChallengeReport, format: ReportFormat) -> Vec<u8> {
    match format {
        ReportFormat::Json => to_canonical_json(report).into_bytes(),
        ReportFormat::Csv => render_csv(report),
        ReportFormat::Table => render_table(report),
    }
}

impl ChallengeReport {
    pub fn from_json(text: &str) -> Result<Self, ReportError> {
        serde_json::from_str(text).map_err(|e| ReportError::Parse(e.to_string()))
    }
}
