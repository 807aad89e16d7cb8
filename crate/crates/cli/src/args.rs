use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use histoeval::dataset::NucleiRoute;
use histoeval::metrics::{AbsentPolicy, DiceMode, MatchStrategy, DEFAULT_RADIUS};
use histoeval::report::ReportFormat;
use histoeval::Connectivity;

const DATASET_LAYOUT: &str = "\
Dataset directories:
  tissue/<case_id>.json   tissue polygons (FeatureCollection), or
  tissue/<case_id>.png    8-bit indexed label mask (0 = background)
  nuclei/<case_id>.json   nuclei polygons and/or points
  dims.csv                optional case_id,width,height rows
Ground truth and prediction pair by file stem; a case present on one side
only is reported as a failed case. Class names are matched case-insensitively
against the track taxonomy.

Exit status: 0 success, 1 finished with failed cases, 2 usage or config error.";

const RUN_CONTRACT: &str = "\
Command contract:
  The template is split with shell quoting rules, then {input_image},
  {output_dir} and {case_id} are substituted inside each argument. The program
  runs without a shell, stdin/stdout closed, in a fresh {output_dir}. Exit 0
  means success; it must then leave tissue.png (8-bit label mask) and/or
  nuclei.json (FeatureCollection of points/polygons) in {output_dir}.
  Statuses: ok, nonzero_exit, timeout, missing_output, parse_error.
Input images: every file in --images-dir; the case id is the file stem.
Ground truth: --gt-dir in the dataset layout (tissue/, nuclei/, dims.csv).

Exit status: 0 success, 1 finished with failed cases, 2 usage or config error.";

#[derive(Debug, Parser)]
#[command(
    name = "histoeval",
    version,
    about = "Evaluation harness for panoptic histopathology segmentation",
    after_help = "Exit status: 0 success, 1 evaluation finished with failed cases \
                  (or a failed check), 2 usage or configuration error."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Rasterize an annotation file into an indexed PNG label mask.
    Rasterize(RasterizeArgs),
    /// Score tissue masks (per-class Dice) of a prediction directory.
    #[command(after_help = DATASET_LAYOUT)]
    EvalTissue(EvalArgs),
    /// Score nuclei detections (per-class F1) of a prediction directory.
    #[command(after_help = DATASET_LAYOUT)]
    EvalNuclei(EvalArgs),
    /// Score both layers and write a challenge report.
    #[command(after_help = DATASET_LAYOUT)]
    Eval(EvalArgs),
    /// Relabel a Track 2 nuclei annotation file onto Track 1 classes.
    MapTaxonomy(MapArgs),
    /// Split a case manifest into train/validation/test.
    #[command(
        after_help = "Output: JSON {seed, stratified, train, validation, test} with sorted case ids."
    )]
    Split(SplitArgs),
    /// Check the masked cross-entropy gradient against finite differences.
    #[command(
        after_help = "Input: JSON {width, height, classes, logits, labels, mask}; logits are\n\
                            row-major with classes innermost, mask entries true where annotated.\n\
                            Output: JSON {loss, annotated_pixels, max_discrepancy, step, tolerance, pass}.\n\
                            Exit status 1 when max_discrepancy >= tolerance."
    )]
    LossCheck(LossArgs),
    /// Generate synthetic ground truth/prediction pairs with known scores.
    #[command(
        after_help = "Writes <out>/gt and <out>/pred in the dataset layout (tissue/, nuclei/,\n\
                            dims.csv) and <out>/expected.json with the exact counts per case."
    )]
    Synth(SynthArgs),
    /// Run an external model on every input image, then evaluate its outputs.
    #[command(after_help = RUN_CONTRACT)]
    Run(RunArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TrackArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LayerArg {
    Tissue,
    Nuclei,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Json,
    Csv,
    Table,
}

impl From<FormatArg> for ReportFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Json => ReportFormat::Json,
            FormatArg::Csv => ReportFormat::Csv,
            FormatArg::Table => ReportFormat::Table,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    Optimal,
    Greedy,
}

impl From<StrategyArg> for MatchStrategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Optimal => MatchStrategy::Optimal,
            StrategyArg::Greedy => MatchStrategy::Greedy,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DiceModeArg {
    Pooled,
    PerImageMean,
}

impl From<DiceModeArg> for DiceMode {
    fn from(m: DiceModeArg) -> Self {
        match m {
            DiceModeArg::Pooled => DiceMode::Pooled,
            DiceModeArg::PerImageMean => DiceMode::PerImageMean,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AbsentArg {
    Skip,
    ScoreOne,
}

impl From<AbsentArg> for AbsentPolicy {
    fn from(a: AbsentArg) -> Self {
        match a {
            AbsentArg::Skip => AbsentPolicy::Skip,
            AbsentArg::ScoreOne => AbsentPolicy::ScoreOne,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ConnectivityArg {
    #[value(name = "4")]
    Four,
    #[value(name = "8")]
    Eight,
}

impl From<ConnectivityArg> for Connectivity {
    fn from(c: ConnectivityArg) -> Self {
        match c {
            ConnectivityArg::Four => Connectivity::Four,
            ConnectivityArg::Eight => Connectivity::Eight,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RouteArg {
    Geometry,
    Mask,
}

impl From<RouteArg> for NucleiRoute {
    fn from(r: RouteArg) -> Self {
        match r {
            RouteArg::Geometry => NucleiRoute::Geometry,
            RouteArg::Mask => NucleiRoute::Mask,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SuperclassArg {
    Tumor,
    Tils,
    Other,
}

impl SuperclassArg {
    pub fn name(self) -> &'static str {
        match self {
            SuperclassArg::Tumor => "tumor",
            SuperclassArg::Tils => "tils",
            SuperclassArg::Other => "other",
        }
    }
}

/// Nuclei taxonomy selection.
#[derive(Debug, Clone, Args)]
pub struct TaxonomyArgs {
    /// Track 1: tumor, TILs, other. Track 2: nine subcategories.
    #[arg(long, value_enum, default_value = "1")]
    pub track: TrackArg,
    /// Append a tenth class to the Track 2 taxonomy.
    #[arg(long, requires = "extra_maps_to")]
    pub extra_class: Option<String>,
    /// Track 1 class the extra class belongs to.
    #[arg(long, value_enum, requires = "extra_class")]
    pub extra_maps_to: Option<SuperclassArg>,
}

/// Fallback image size for cases not listed in `dims.csv`.
#[derive(Debug, Clone, Args)]
pub struct DimsArgs {
    /// Image width for cases without a dims.csv entry.
    #[arg(long, default_value_t = 1024)]
    pub width: u32,
    /// Image height for cases without a dims.csv entry.
    #[arg(long, default_value_t = 1024)]
    pub height: u32,
}

#[derive(Debug, Clone, Args)]
pub struct ScoringArgs {
    /// Matching radius in pixels.
    #[arg(long, env = "HISTOEVAL_RADIUS", default_value_t = DEFAULT_RADIUS)]
    pub radius: f64,
    #[arg(long, value_enum, default_value = "optimal")]
    pub strategy: StrategyArg,
    #[arg(long, value_enum, default_value = "pooled")]
    pub dice_mode: DiceModeArg,
    #[arg(long, value_enum, default_value = "skip")]
    pub absent_policy: AbsentArg,
    /// Pixel connectivity of nucleus components (mask route).
    #[arg(long, value_enum, default_value = "8")]
    pub connectivity: ConnectivityArg,
    /// How nuclei annotations become points: each feature's centroid, or
    /// rasterize and take connected-component centroids.
    #[arg(long, value_enum, default_value = "geometry")]
    pub nuclei_route: RouteArg,
    /// Worker threads (default: available processors).
    #[arg(long, env = "HISTOEVAL_JOBS")]
    pub jobs: Option<usize>,
    /// Seed to echo in the report (e.g. the split seed).
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    /// Report format (single-layer commands: json only).
    #[arg(long, value_enum, default_value = "json")]
    pub format: FormatArg,
    /// Output file (default: standard output).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// `eval-tissue` and `eval-nuclei` only write JSON.
#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Ground-truth dataset directory.
    #[arg(long)]
    pub gt_dir: PathBuf,
    /// Prediction dataset directory.
    #[arg(long)]
    pub pred_dir: PathBuf,
    #[command(flatten)]
    pub taxonomy: TaxonomyArgs,
    #[command(flatten)]
    pub scoring: ScoringArgs,
    #[command(flatten)]
    pub dims: DimsArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct RasterizeArgs {
    /// FeatureCollection with `classification.name` properties.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "tissue")]
    pub layer: LayerArg,
    #[command(flatten)]
    pub taxonomy: TaxonomyArgs,
    #[command(flatten)]
    pub dims: DimsArgs,
    /// Output PNG (indexed, 0 = background, class indices from 1).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct MapArgs {
    /// Track 2 nuclei annotation file.
    #[arg(long)]
    pub input: PathBuf,
    /// Tenth Track 2 class present in the input.
    #[arg(long, requires = "extra_maps_to")]
    pub extra_class: Option<String>,
    /// Track 1 class the extra class maps onto.
    #[arg(long, value_enum, requires = "extra_class")]
    pub extra_maps_to: Option<SuperclassArg>,
    #[command(flatten)]
    pub dims: DimsArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SplitArgs {
    /// CSV of `case_id[,stratum]`, header optional, `#` comments.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Train, validation and test sizes, e.g. `154,26,26`.
    #[arg(long, value_delimiter = ',', required = true)]
    pub sizes: Vec<usize>,
    #[arg(long)]
    pub seed: u64,
    /// Allocate every stratum proportionally across the splits.
    #[arg(long)]
    pub stratified: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Fixture: `{"width", "height", "classes", "logits": [...], "labels": [...],
/// "mask": [...]}` with logits row-major, classes innermost.
#[derive(Debug, Clone, Args)]
pub struct LossArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    /// Largest accepted discrepancy.
    #[arg(long, default_value_t = 1e-5)]
    pub tolerance: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// Output root; receives `gt/`, `pred/` and `expected.json`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub cases: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 512)]
    pub width: u32,
    #[arg(long, default_value_t = 512)]
    pub height: u32,
    #[command(flatten)]
    pub taxonomy: TaxonomyArgs,
    /// Ground-truth nuclei per class, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "4,3,3")]
    pub nuclei: Vec<usize>,
    /// Tissue rectangles per tissue class, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "1,1,1,1,1")]
    pub tissue_regions: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    pub drop: usize,
    #[arg(long, default_value_t = 0)]
    pub spurious: usize,
    #[arg(long, default_value_t = 0.0)]
    pub jitter: f64,
    #[arg(long, default_value_t = 0)]
    pub erosion: u32,
    #[arg(long, default_value_t = DEFAULT_RADIUS)]
    pub radius: f64,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Command template with `{input_image}`, `{output_dir}` and optionally
    /// `{case_id}`. The program must write `tissue.png` and/or `nuclei.json`
    /// into `{output_dir}` and exit 0.
    #[arg(long)]
    pub command: String,
    /// One input image per case; the case id is the file stem.
    #[arg(long)]
    pub images_dir: PathBuf,
    #[arg(long)]
    pub gt_dir: PathBuf,
    /// Per-case output directories are created here.
    #[arg(long)]
    pub work_dir: PathBuf,
    /// Seconds per case.
    #[arg(long, default_value_t = 600.0)]
    pub timeout: f64,
    #[arg(long, default_value_t = 1)]
    pub max_parallel: usize,
    /// Outputs the model produces.
    #[arg(
        long,
        value_enum,
        value_delimiter = ',',
        default_value = "tissue,nuclei"
    )]
    pub outputs: Vec<LayerArg>,
    #[command(flatten)]
    pub taxonomy: TaxonomyArgs,
    #[command(flatten)]
    pub scoring: ScoringArgs,
    #[command(flatten)]
    pub dims: DimsArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}
