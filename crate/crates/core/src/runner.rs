//! Runs an external inference command once per case.
//!
//! # Command contract
//!
//! The template is split into arguments with POSIX shell quoting rules
//! *before* substitution, so substituted paths never need escaping. Within
//! each argument these placeholders are replaced literally:
//!
//! | placeholder     | value                                        |
//! |-----------------|----------------------------------------------|
//! | `{input_image}` | path of the case's input image               |
//! | `{output_dir}`  | fresh, empty directory `<output_root>/<case_id>` |
//! | `{case_id}`     | the case identifier                          |
//!
//! `{input_image}` and `{output_dir}` are mandatory. The program is executed
//! directly (no shell) with stdin and stdout closed to `/dev/null`; the last
//! 4 KiB of stderr are kept. On Unix the child leads its own process group
//! and the whole group is killed with `SIGKILL` on timeout.
//!
//! Exit status 0 means success. The command must then leave
//!
//! * `tissue.png`: 8-bit indexed or grayscale label mask (0 = background), and/or
//! * `nuclei.json`: FeatureCollection of `Point`/`Polygon` features named by
//!   the nuclei taxonomy; polygons are reduced to their centroids,
//!
//! in `{output_dir}`, as selected by [`ExpectedOutputs`].

use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use wait_timeout::ChildExt;

use crate::dataset::{load_nuclei, load_tissue, nuclei_from_json, NucleiRoute, PairingOptions};
use crate::evaluate::{CaseData, CaseFailure};
use crate::mask_io::read_mask;
use crate::raster::{Connectivity, LabelMask, NucleiSet};
use crate::taxonomy::Taxonomy;

pub const STDERR_TAIL_BYTES: usize = 4096;
pub const TISSUE_OUTPUT: &str = "tissue.png";
pub const NUCLEI_OUTPUT: &str = "nuclei.json";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RunnerError {
    #[error("bad command template: {0}")]
    BadTemplate(String),
    #[error("invalid runner config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectedOutputs {
    pub tissue_mask: bool,
    pub nuclei_json: bool,
}

impl ExpectedOutputs {
    pub const BOTH: Self = Self {
        tissue_mask: true,
        nuclei_json: true,
    };
}

#[derive(Debug, Clone)]
pub struct RunnerConfig {
    args: Vec<String>,
    pub timeout: Duration,
    pub max_parallel: usize,
    pub expected_outputs: ExpectedOutputs,
    pub output_root: PathBuf,
    pub nuclei_taxonomy: Taxonomy,
}

impl RunnerConfig {
    pub fn new(
        command_template: &str,
        timeout: Duration,
        max_parallel: usize,
        expected_outputs: ExpectedOutputs,
        output_root: impl Into<PathBuf>,
        nuclei_taxonomy: Taxonomy,
    ) -> Result<Self, RunnerError> {
        let args = shell_words::split(command_template)
            .map_err(|e| RunnerError::BadTemplate(e.to_string()))?;
        if args.is_empty() {
            return Err(RunnerError::BadTemplate("empty command".into()));
        }
        for ph in ["{input_image}", "{output_dir}"] {
            if !args.iter().any(|a| a.contains(ph)) {
                return Err(RunnerError::BadTemplate(format!(
                    "missing placeholder {ph}"
                )));
            }
        }
        if timeout.is_zero() {
            return Err(RunnerError::InvalidConfig(
                "timeout must be positive".into(),
            ));
        }
        if max_parallel == 0 {
            return Err(RunnerError::InvalidConfig(
                "max_parallel must be at least 1".into(),
            ));
        }
        if !expected_outputs.tissue_mask && !expected_outputs.nuclei_json {
            return Err(RunnerError::InvalidConfig("no expected outputs".into()));
        }
        Ok(Self {
            args,
            timeout,
            max_parallel,
            expected_outputs,
            output_root: output_root.into(),
            nuclei_taxonomy,
        })
    }

    pub fn output_dir(&self, case_id: &str) -> PathBuf {
        self.output_root.join(case_id)
    }

    fn command_for(&self, case: &RunnerCase, output_dir: &Path) -> Vec<String> {
        self.args
            .iter()
            .map(|a| {
                a.replace("{input_image}", &case.input_image.to_string_lossy())
                    .replace("{output_dir}", &output_dir.to_string_lossy())
                    .replace("{case_id}", &case.case_id)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunnerCase {
    pub case_id: String,
    pub input_image: PathBuf,
    /// Needed to parse `nuclei.json` when no tissue mask is produced.
    pub dims: Option<(u32, u32)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    NonzeroExit,
    Timeout,
    MissingOutput,
    ParseError,
}

impl std::fmt::Display for Status {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Status::Ok => "ok",
            Status::NonzeroExit => "nonzero_exit",
            Status::Timeout => "timeout",
            Status::MissingOutput => "missing_output",
            Status::ParseError => "parse_error",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseOutputs {
    pub tissue: Option<LabelMask>,
    pub nuclei: Option<NucleiSet>,
}

/// Result of one case. `outputs` is present iff `status` is `Ok`.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseOutcome {
    pub case_id: String,
    pub status: Status,
    pub outputs: Option<CaseOutputs>,
    pub exit_code: Option<i32>,
    /// Human-readable cause for statuses other than `Ok`.
    pub detail: String,
    pub stderr_tail: String,
    pub wall_time: Duration,
}

impl CaseOutcome {
    fn failed(case_id: &str, status: Status, detail: String, start: Instant) -> Self {
        Self {
            case_id: case_id.to_string(),
            status,
            outputs: None,
            exit_code: None,
            detail,
            stderr_tail: String::new(),
            wall_time: start.elapsed(),
        }
    }

    pub fn failure(&self) -> Option<CaseFailure> {
        (self.status != Status::Ok).then(|| CaseFailure {
            case_id: self.case_id.clone(),
            reason: if self.detail.is_empty() {
                self.status.to_string()
            } else {
                format!("{}: {}", self.status, self.detail)
            },
        })
    }
}

fn tail_reader(mut r: impl Read + Send + 'static) -> std::thread::JoinHandle<Vec<u8>> {
    std::thread::spawn(move || {
        let mut tail = Vec::new();
        let mut buf = [0u8; 4096];
        loop {
            match r.read(&mut buf) {
                Ok(0) | Err(_) => break,
                Ok(n) => {
                    tail.extend_from_slice(&buf[..n]);
                    if tail.len() > 2 * STDERR_TAIL_BYTES {
                        tail.drain(..tail.len() - STDERR_TAIL_BYTES);
                    }
                }
            }
        }
        if tail.len() > STDERR_TAIL_BYTES {
            tail.drain(..tail.len() - STDERR_TAIL_BYTES);
        }
        tail
    })
}

#[cfg(unix)]
fn isolate(cmd: &mut Command) {
    use std::os::unix::process::CommandExt;
    cmd.process_group(0);
}

#[cfg(not(unix))]
fn isolate(_cmd: &mut Command) {}

fn kill_tree(child: &mut std::process::Child) {
    #[cfg(unix)]
    {
        // the child is its own group leader, so its pid is the group id
        let pgid = child.id() as libc::pid_t;
        unsafe {
            libc::kill(-pgid, libc::SIGKILL);
        }
    }
    let _ = child.kill();
}

/// Runs one case. Model failures are reported through the returned status.
pub fn run_case(config: &RunnerConfig, case: &RunnerCase) -> CaseOutcome {
    let start = Instant::now();
    let out_dir = config.output_dir(&case.case_id);
    if out_dir.exists() {
        if let Err(e) = std::fs::remove_dir_all(&out_dir) {
            return CaseOutcome::failed(&case.case_id, Status::MissingOutput, e.to_string(), start);
        }
    }
    if let Err(e) = std::fs::create_dir_all(&out_dir) {
        return CaseOutcome::failed(&case.case_id, Status::MissingOutput, e.to_string(), start);
    }

    let argv = config.command_for(case, &out_dir);
    let mut cmd = Command::new(&argv[0]);
    cmd.args(&argv[1..])
        .stdin(Stdio::null())
        .stdout(Stdio::null())
        .stderr(Stdio::piped());
    isolate(&mut cmd);
    let mut child = match cmd.spawn() {
        Ok(c) => c,
        Err(e) => {
            return CaseOutcome::failed(
                &case.case_id,
                Status::NonzeroExit,
                format!("cannot start `{}`: {e}", argv[0]),
                start,
            )
        }
    };
    let stderr = tail_reader(child.stderr.take().expect("piped stderr"));
    let waited = child.wait_timeout(config.timeout);
    let (status, exit_code, detail) = match waited {
        Ok(Some(st)) if st.success() => (Status::Ok, Some(0), String::new()),
        Ok(Some(st)) => (
            Status::NonzeroExit,
            st.code(),
            match st.code() {
                Some(c) => format!("exit code {c}"),
                None => "terminated by signal".to_string(),
            },
        ),
        Ok(None) => {
            kill_tree(&mut child);
            let _ = child.wait();
            (
                Status::Timeout,
                None,
                format!("exceeded {:.3} s", config.timeout.as_secs_f64()),
            )
        }
        Err(e) => {
            kill_tree(&mut child);
            let _ = child.wait();
            (Status::NonzeroExit, None, e.to_string())
        }
    };
    let tail = stderr.join().unwrap_or_default();
    let stderr_tail = String::from_utf8_lossy(&tail).into_owned();

    let mut outcome = CaseOutcome {
        case_id: case.case_id.clone(),
        status,
        outputs: None,
        exit_code,
        detail,
        stderr_tail,
        wall_time: Duration::ZERO,
    };
    if status == Status::Ok {
        match collect_outputs(config, case, &out_dir) {
            Ok(outputs) => outcome.outputs = Some(outputs),
            Err((status, detail)) => {
                outcome.status = status;
                outcome.detail = detail;
            }
        }
    }
    outcome.wall_time = start.elapsed();
    outcome
}

fn collect_outputs(
    config: &RunnerConfig,
    case: &RunnerCase,
    dir: &Path,
) -> Result<CaseOutputs, (Status, String)> {
    let read = |name: &str| {
        std::fs::read(dir.join(name)).map_err(|e| (Status::MissingOutput, format!("{name}: {e}")))
    };
    let tissue = if config.expected_outputs.tissue_mask {
        let bytes = read(TISSUE_OUTPUT)?;
        Some(read_mask(&bytes).map_err(|e| (Status::ParseError, format!("{TISSUE_OUTPUT}: {e}")))?)
    } else {
        None
    };
    let nuclei = if config.expected_outputs.nuclei_json {
        let bytes = read(NUCLEI_OUTPUT)?;
        let dims = tissue
            .as_ref()
            .map(|m| (m.width(), m.height()))
            .or(case.dims);
        Some(
            nuclei_from_json(
                &bytes,
                &case.case_id,
                &config.nuclei_taxonomy,
                dims,
                NucleiRoute::Geometry,
                Connectivity::Eight,
            )
            .map_err(|e| (Status::ParseError, format!("{NUCLEI_OUTPUT}: {e}")))?,
        )
    } else {
        None
    };
    Ok(CaseOutputs { tissue, nuclei })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSummary {
    pub ok: usize,
    pub failed: usize,
    pub wall_time: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRun {
    /// In input order.
    pub outcomes: Vec<CaseOutcome>,
    pub summary: RunSummary,
}

/// Runs up to `max_parallel` cases at a time.
pub fn run_dataset(config: &RunnerConfig, cases: &[RunnerCase]) -> DatasetRun {
    let start = Instant::now();
    let run = || {
        cases
            .par_iter()
            .map(|c| run_case(config, c))
            .collect::<Vec<_>>()
    };
    let outcomes = match rayon::ThreadPoolBuilder::new()
        .num_threads(config.max_parallel)
        .build()
    {
        Ok(pool) => pool.install(run),
        Err(_) => cases.iter().map(|c| run_case(config, c)).collect(),
    };
    let ok = outcomes.iter().filter(|o| o.status == Status::Ok).count();
    DatasetRun {
        summary: RunSummary {
            ok,
            failed: outcomes.len() - ok,
            wall_time: start.elapsed(),
        },
        outcomes,
    }
}

/// Pairs successful outcomes with ground truth under `gt_root`. Failed runs
/// and cases whose ground truth cannot be loaded become failures.
pub fn pair_with_ground_truth(
    outcomes: &[CaseOutcome],
    gt_root: &Path,
    opts: &PairingOptions<'_>,
) -> (Vec<CaseData>, Vec<CaseFailure>) {
    let mut cases = Vec::new();
    let mut failures = Vec::new();
    for o in outcomes {
        if let Some(f) = o.failure() {
            failures.push(f);
            continue;
        }
        let outputs = o.outputs.as_ref().expect("ok outcome has outputs");
        let load = || -> Result<CaseData, String> {
            let tissue = match (&outputs.tissue, opts.layers.tissue) {
                (Some(pred), true) => Some((
                    pred.clone(),
                    load_tissue(gt_root, &o.case_id, opts.tissue_taxonomy, opts.dims)
                        .map_err(|e| e.to_string())?,
                )),
                _ => None,
            };
            let nuclei = match (&outputs.nuclei, opts.layers.nuclei) {
                (Some(pred), true) => Some((
                    pred.clone(),
                    load_nuclei(
                        gt_root,
                        &o.case_id,
                        opts.nuclei_taxonomy,
                        opts.dims,
                        opts.route,
                        opts.connectivity,
                    )
                    .map_err(|e| e.to_string())?,
                )),
                _ => None,
            };
            Ok(CaseData {
                case_id: o.case_id.clone(),
                tissue,
                nuclei,
            })
        };
        match load() {
            Ok(c) => cases.push(c),
            Err(reason) => failures.push(CaseFailure {
                case_id: o.case_id.clone(),
                reason,
            }),
        }
    }
    (cases, failures)
}
