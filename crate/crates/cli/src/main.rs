mod args;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::Parser;
use serde::{Deserialize, Serialize};

use histoeval::annotations::{map_taxonomy, parse_annotation_file, write_annotation_file, Layer};
use histoeval::dataset::{pair_dirs, Dimensions, Layers, PairingOptions};
use histoeval::evaluate::{evaluate_dataset, CaseData, CaseFailure, EvalConfig, ReportContext};
use histoeval::loss::{finite_difference_check, masked_cross_entropy, LogitField, MaskedTarget};
use histoeval::mask_io::write_mask;
use histoeval::raster::rasterize;
use histoeval::report::{render, to_canonical_json, ChallengeReport, Track};
use histoeval::runner::{
    pair_with_ground_truth, run_dataset, ExpectedOutputs, RunnerCase, RunnerConfig,
};
use histoeval::splits::{read_manifest, split_dataset, SplitSizes};
use histoeval::synthgen::{generate_case, write_dataset, SynthSpec};
use histoeval::{Taxonomy, TaxonomyMapping};

use args::*;

/// Finished, but some cases failed or a check did not pass.
const EXIT_FAILURES: u8 = 1;
const EXIT_USAGE: u8 = 2;

enum Outcome {
    Clean,
    Failures,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(Outcome::Clean) => ExitCode::SUCCESS,
        Ok(Outcome::Failures) => ExitCode::from(EXIT_FAILURES),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}

fn run(command: Command) -> Result<Outcome> {
    match command {
        Command::Rasterize(a) => cmd_rasterize(a),
        Command::EvalTissue(a) => cmd_eval(
            a,
            Layers {
                tissue: true,
                nuclei: false,
            },
        ),
        Command::EvalNuclei(a) => cmd_eval(
            a,
            Layers {
                tissue: false,
                nuclei: true,
            },
        ),
        Command::Eval(a) => cmd_eval(
            a,
            Layers {
                tissue: true,
                nuclei: true,
            },
        ),
        Command::MapTaxonomy(a) => cmd_map(a),
        Command::Split(a) => cmd_split(a),
        Command::LossCheck(a) => cmd_loss(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Run(a) => cmd_run(a),
    }
}

fn emit(bytes: &[u8], out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, bytes).with_context(|| format!("writing {}", p.display())),
        None => {
            use std::io::Write;
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(bytes)?;
            stdout.flush()?;
            Ok(())
        }
    }
}

struct NucleiTrack {
    track: Track,
    taxonomy: Taxonomy,
    mapping: Option<TaxonomyMapping>,
}

fn nuclei_track(a: &TaxonomyArgs) -> Result<NucleiTrack> {
    match a.track {
        TrackArg::One => {
            if a.extra_class.is_some() {
                bail!("--extra-class needs --track 2");
            }
            Ok(NucleiTrack {
                track: Track::Track1,
                taxonomy: Taxonomy::track1(),
                mapping: None,
            })
        }
        TrackArg::Two => {
            let (taxonomy, mapping) = track2(a.extra_class.as_deref(), a.extra_maps_to)?;
            Ok(NucleiTrack {
                track: Track::Track2,
                taxonomy,
                mapping: Some(mapping),
            })
        }
    }
}

fn track2(
    extra: Option<&str>,
    maps_to: Option<SuperclassArg>,
) -> Result<(Taxonomy, TaxonomyMapping)> {
    let taxonomy = match extra {
        Some(name) => Taxonomy::track2_with_extra(name)?,
        None => Taxonomy::track2(),
    };
    let mapping =
        TaxonomyMapping::track2_source_to_track1(taxonomy.clone(), maps_to.map(|m| m.name()))?;
    Ok((taxonomy, mapping))
}

fn eval_config(s: &ScoringArgs) -> Result<EvalConfig> {
    if !(s.radius > 0.0 && s.radius.is_finite()) {
        bail!("--radius must be a positive number, got {}", s.radius);
    }
    Ok(EvalConfig {
        radius: s.radius,
        strategy: s.strategy.into(),
        dice_mode: s.dice_mode.into(),
        absent_policy: s.absent_policy.into(),
        connectivity: s.connectivity.into(),
    })
}

fn jobs(s: &ScoringArgs) -> Result<usize> {
    match s.jobs {
        Some(0) => bail!("--jobs must be at least 1"),
        Some(n) => Ok(n),
        None => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn require_dir(p: &Path, flag: &str) -> Result<()> {
    if !p.is_dir() {
        bail!("{flag} {} is not a directory", p.display());
    }
    Ok(())
}

fn report_failures(failures: &[CaseFailure]) {
    for f in failures {
        eprintln!("case {}: {}", f.case_id, f.reason);
    }
}

struct Scored {
    report: ChallengeReport,
    failed: bool,
}

#[allow(clippy::too_many_arguments)]
fn score(
    cases: &[CaseData],
    upstream: Vec<CaseFailure>,
    tissue_taxonomy: &Taxonomy,
    nt: &NucleiTrack,
    config: &EvalConfig,
    jobs: usize,
    seed: Option<u64>,
) -> Result<Scored> {
    let eval = evaluate_dataset(cases, tissue_taxonomy, &nt.taxonomy, config, jobs)?;
    report_failures(&upstream);
    report_failures(&eval.failures);
    let report = eval.report(
        config,
        &ReportContext {
            track: nt.track,
            tissue_taxonomy,
            nuclei_taxonomy: &nt.taxonomy,
            mapping: nt.mapping.as_ref(),
            seed,
            upstream_failures: upstream.len(),
        },
    )?;
    let failed = report.config.failed_cases > 0;
    Ok(Scored { report, failed })
}

#[derive(Serialize)]
struct LayerReport<'a> {
    schema_version: u32,
    track: Track,
    #[serde(skip_serializing_if = "Option::is_none")]
    tissue: Option<&'a histoeval::report::TissueSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    nuclei: Option<&'a histoeval::report::NucleiSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    supercategories: Option<&'a histoeval::report::NucleiSection>,
    config: &'a histoeval::report::ConfigEcho,
}

fn render_layers(report: &ChallengeReport, layers: Layers, format: FormatArg) -> Result<Vec<u8>> {
    if layers.tissue && layers.nuclei {
        return Ok(render(report, format.into()));
    }
    if format != FormatArg::Json {
        bail!("single-layer evaluation writes JSON only; use `eval` for csv or table output");
    }
    let view = LayerReport {
        schema_version: report.schema_version,
        track: report.track,
        tissue: layers.tissue.then_some(&report.tissue),
        nuclei: layers.nuclei.then_some(&report.nuclei),
        supercategories: if layers.nuclei {
            report.supercategories.as_ref()
        } else {
            None
        },
        config: &report.config,
    };
    Ok(to_canonical_json(&view).into_bytes())
}

fn cmd_eval(a: EvalArgs, layers: Layers) -> Result<Outcome> {
    require_dir(&a.gt_dir, "--gt-dir")?;
    require_dir(&a.pred_dir, "--pred-dir")?;
    if !(layers.tissue && layers.nuclei) && a.output.format != FormatArg::Json {
        bail!("single-layer evaluation writes JSON only; use `eval` for csv or table output");
    }
    let nt = nuclei_track(&a.taxonomy)?;
    let config = eval_config(&a.scoring)?;
    let jobs = jobs(&a.scoring)?;
    let tissue_taxonomy = Taxonomy::tissue();
    let dims = Dimensions::discover(
        &[a.gt_dir.as_path(), a.pred_dir.as_path()],
        Some((a.dims.width, a.dims.height)),
    )?;
    let opts = PairingOptions {
        tissue_taxonomy: &tissue_taxonomy,
        nuclei_taxonomy: &nt.taxonomy,
        dims: &dims,
        route: a.scoring.nuclei_route.into(),
        connectivity: config.connectivity,
        layers,
    };
    let (cases, failures) = pair_dirs(&a.gt_dir, &a.pred_dir, &opts)?;
    if cases.is_empty() && failures.is_empty() {
        bail!(
            "no cases found under {} or {}",
            a.gt_dir.display(),
            a.pred_dir.display()
        );
    }
    let scored = score(
        &cases,
        failures,
        &tissue_taxonomy,
        &nt,
        &config,
        jobs,
        a.scoring.seed,
    )?;
    emit(
        &render_layers(&scored.report, layers, a.output.format)?,
        a.output.out.as_deref(),
    )?;
    Ok(if scored.failed {
        Outcome::Failures
    } else {
        Outcome::Clean
    })
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn case_id_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn cmd_rasterize(a: RasterizeArgs) -> Result<Outcome> {
    let (taxonomy, layer) = match a.layer {
        LayerArg::Tissue => (Taxonomy::tissue(), Layer::Tissue),
        LayerArg::Nuclei => (nuclei_track(&a.taxonomy)?.taxonomy, Layer::Nuclei),
    };
    let set = parse_annotation_file(
        &read(&a.input)?,
        &taxonomy,
        layer,
        &case_id_of(&a.input),
        Some((a.dims.width, a.dims.height)),
    )
    .with_context(|| a.input.display().to_string())?;
    let mask = rasterize(&set)?;
    emit(&write_mask(&mask)?, Some(&a.out))?;
    Ok(Outcome::Clean)
}

fn cmd_map(a: MapArgs) -> Result<Outcome> {
    let (source, mapping) = track2(a.extra_class.as_deref(), a.extra_maps_to)?;
    let set = parse_annotation_file(
        &read(&a.input)?,
        &source,
        Layer::Nuclei,
        &case_id_of(&a.input),
        Some((a.dims.width, a.dims.height)),
    )
    .with_context(|| a.input.display().to_string())?;
    let mapped = map_taxonomy(&set, &mapping)?;
    emit(
        write_annotation_file(&mapped, mapping.target()).as_bytes(),
        a.out.as_deref(),
    )?;
    Ok(Outcome::Clean)
}

fn cmd_split(a: SplitArgs) -> Result<Outcome> {
    let &[train, validation, test] = a.sizes.as_slice() else {
        bail!(
            "--sizes takes three comma-separated counts, got {}",
            a.sizes.len()
        );
    };
    let text = std::fs::read_to_string(&a.manifest)
        .with_context(|| format!("reading {}", a.manifest.display()))?;
    let manifest = read_manifest(&text)?;
    let sizes = SplitSizes::new(train, validation, test);
    let split = split_dataset(&manifest, sizes, a.seed, a.stratified)?;
    emit(split.to_json().as_bytes(), a.out.as_deref())?;
    Ok(Outcome::Clean)
}

#[derive(Deserialize)]
struct LossFixture {
    width: usize,
    height: usize,
    classes: usize,
    logits: Vec<f64>,
    labels: Vec<usize>,
    mask: Vec<bool>,
}

#[derive(Serialize)]
struct LossCheck {
    loss: f64,
    annotated_pixels: usize,
    max_discrepancy: f64,
    step: f64,
    tolerance: f64,
    pass: bool,
}

fn cmd_loss(a: LossArgs) -> Result<Outcome> {
    if a.tolerance.is_nan() || a.tolerance < 0.0 {
        bail!("--tolerance must be non-negative");
    }
    let fixture: LossFixture = serde_json::from_slice(&read(&a.input)?)
        .with_context(|| format!("parsing {}", a.input.display()))?;
    let logits = LogitField::new(
        fixture.width,
        fixture.height,
        fixture.classes,
        fixture.logits,
    )?;
    let target = MaskedTarget {
        labels: fixture.labels,
        mask: fixture.mask,
    };
    let (loss, annotated_pixels) = masked_cross_entropy(&logits, &target)?;
    let max_discrepancy = finite_difference_check(&logits, &target, a.step)?;
    let pass = max_discrepancy < a.tolerance;
    let check = LossCheck {
        loss,
        annotated_pixels,
        max_discrepancy,
        step: a.step,
        tolerance: a.tolerance,
        pass,
    };
    emit(to_canonical_json(&check).as_bytes(), a.out.as_deref())?;
    Ok(if pass {
        Outcome::Clean
    } else {
        Outcome::Failures
    })
}

fn cmd_synth(a: SynthArgs) -> Result<Outcome> {
    let nt = nuclei_track(&a.taxonomy)?;
    let tissue_taxonomy = Taxonomy::tissue();
    if a.nuclei.len() != nt.taxonomy.len() {
        bail!(
            "--nuclei lists {} classes, the {} taxonomy has {}",
            a.nuclei.len(),
            nt.taxonomy.name(),
            nt.taxonomy.len()
        );
    }
    if a.tissue_regions.len() != tissue_taxonomy.len() {
        bail!(
            "--tissue-regions lists {} classes, the tissue taxonomy has {}",
            a.tissue_regions.len(),
            tissue_taxonomy.len()
        );
    }
    let mut cases = Vec::with_capacity(a.cases);
    for i in 0..a.cases {
        let spec = SynthSpec {
            seed: a.seed.wrapping_add(i as u64),
            width: a.width,
            height: a.height,
            nuclei_per_class: a.nuclei.clone(),
            tissue_regions_per_class: a.tissue_regions.clone(),
            drop_count: a.drop,
            spurious_count: a.spurious,
            jitter_sigma: a.jitter,
            tissue_erosion: a.erosion,
            radius: a.radius,
        };
        let id = format!("synth_{i:04}");
        let case = generate_case(&id, &spec)?;
        cases.push((id, case));
    }
    write_dataset(&a.out, &cases, &tissue_taxonomy, &nt.taxonomy)
        .with_context(|| format!("writing {}", a.out.display()))?;
    eprintln!("wrote {} case(s) to {}", cases.len(), a.out.display());
    Ok(Outcome::Clean)
}

fn input_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        if path.is_file() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn cmd_run(a: RunArgs) -> Result<Outcome> {
    require_dir(&a.images_dir, "--images-dir")?;
    require_dir(&a.gt_dir, "--gt-dir")?;
    if !(a.timeout > 0.0 && a.timeout.is_finite()) {
        bail!("--timeout must be a positive number of seconds");
    }
    let nt = nuclei_track(&a.taxonomy)?;
    let config = eval_config(&a.scoring)?;
    let jobs = jobs(&a.scoring)?;
    let layers = Layers {
        tissue: a.outputs.contains(&LayerArg::Tissue),
        nuclei: a.outputs.contains(&LayerArg::Nuclei),
    };
    if !(layers.tissue && layers.nuclei) && a.output.format != FormatArg::Json {
        bail!("single-layer evaluation writes JSON only");
    }
    std::fs::create_dir_all(&a.work_dir)
        .with_context(|| format!("creating {}", a.work_dir.display()))?;
    let runner = RunnerConfig::new(
        &a.command,
        Duration::from_secs_f64(a.timeout),
        a.max_parallel,
        ExpectedOutputs {
            tissue_mask: layers.tissue,
            nuclei_json: layers.nuclei,
        },
        &a.work_dir,
        nt.taxonomy.clone(),
    )?;
    let dims = Dimensions::discover(&[a.gt_dir.as_path()], Some((a.dims.width, a.dims.height)))?;
    let cases: Vec<RunnerCase> = input_images(&a.images_dir)?
        .into_iter()
        .map(|p| {
            let case_id = case_id_of(&p);
            RunnerCase {
                dims: dims.get(&case_id),
                case_id,
                input_image: p,
            }
        })
        .collect();
    if cases.is_empty() {
        bail!("no input images in {}", a.images_dir.display());
    }
    let run = run_dataset(&runner, &cases);
    for o in &run.outcomes {
        eprintln!(
            "{}: {} ({:.2} s)",
            o.case_id,
            o.status,
            o.wall_time.as_secs_f64()
        );
        if let Some(f) = o.failure() {
            eprintln!("  {}", f.reason);
            for line in o.stderr_tail.lines() {
                eprintln!("  | {line}");
            }
        }
    }
    eprintln!(
        "{} ok, {} failed in {:.2} s",
        run.summary.ok,
        run.summary.failed,
        run.summary.wall_time.as_secs_f64()
    );

    let tissue_taxonomy = Taxonomy::tissue();
    let opts = PairingOptions {
        tissue_taxonomy: &tissue_taxonomy,
        nuclei_taxonomy: &nt.taxonomy,
        dims: &dims,
        route: a.scoring.nuclei_route.into(),
        connectivity: config.connectivity,
        layers,
    };
    let (pairs, failures) = pair_with_ground_truth(&run.outcomes, &a.gt_dir, &opts);
    let scored = score(
        &pairs,
        failures,
        &tissue_taxonomy,
        &nt,
        &config,
        jobs,
        a.scoring.seed,
    )?;
    emit(
        &render_layers(&scored.report, layers, a.output.format)?,
        a.output.out.as_deref(),
    )?;
    Ok(if scored.failed {
        Outcome::Failures
    } else {
        Outcome::Clean
    })
}
