//! Command-line front end.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::report::{analyze, bounds_table, check_trace, jnum, InputSource};
use crate::scenario::{load_scenario, LoadedScenario, ScenarioError};
use crate::simulator::{read_trace_csv, simulate, RunStatus, SimError, SimulationTrace, TraceMeta};
use crate::supervisor::contraction_check;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_FAILURE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "hyperswitch",
    version,
    about = "Hyperstability analysis and simulation of switched feedback systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Classify modes, run the Lyapunov battery and residence checks, and emit a verdict report.
    Analyze(Common),
    /// Integrate the scenario and write a CSV trace.
    Simulate(Common),
    /// Print maximum and minimum residence bounds.
    Bounds(Common),
    /// Run the invariant suite on a trace written by `simulate`.
    Check(Common),
}

#[derive(Debug, Args, Clone)]
struct Common {
    /// Scenario file.
    #[arg(
        long,
        conflicts_with = "scenario_dir",
        required_unless_present = "scenario_dir"
    )]
    scenario: Option<PathBuf>,
    /// Run every `*.json` scenario in a directory; `--out` is then a directory.
    #[arg(long)]
    scenario_dir: Option<PathBuf>,
    /// Output path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Step size override.
    #[arg(long)]
    dt: Option<f64>,
    /// Seed override for randomized searches.
    #[arg(long)]
    seed: Option<u64>,
    /// Suppress summaries on stdout.
    #[arg(long)]
    quiet: bool,
    /// Trace CSV for `check` and `bounds`.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Declared bound on `u^2` for offline residence bounds.
    #[arg(long)]
    u_sq_cap: Option<f64>,
}

/// Captured result of one command on one scenario.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct CmdOutput {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

impl CmdOutput {
    fn fail(code: i32, msg: impl Into<String>) -> Self {
        Self {
            code,
            stdout: String::new(),
            stderr: msg.into() + "\n",
        }
    }
}

/// Parses arguments, runs the command and returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn std::io::Write, err: &mut dyn std::io::Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                err.write_all(text.as_bytes())
            } else {
                out.write_all(text.as_bytes())
            };
            return code;
        }
    };
    let (kind, common) = match cli.command {
        Command::Analyze(c) => (Kind::Analyze, c),
        Command::Simulate(c) => (Kind::Simulate, c),
        Command::Bounds(c) => (Kind::Bounds, c),
        Command::Check(c) => (Kind::Check, c),
    };
    let results = match &common.scenario_dir {
        Some(dir) => run_batch(kind, &common, dir),
        None => vec![run_one(
            kind,
            &common,
            common
                .scenario
                .as_deref()
                .expect("clap enforces a scenario"),
            common.out.clone(),
        )],
    };
    let mut code = EXIT_OK;
    for r in results {
        let _ = out.write_all(r.stdout.as_bytes());
        let _ = err.write_all(r.stderr.as_bytes());
        code = code.max(r.code);
    }
    code
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Kind {
    Analyze,
    Simulate,
    Bounds,
    Check,
}

impl Kind {
    fn extension(self) -> &'static str {
        match self {
            Kind::Simulate => "csv",
            _ => "json",
        }
    }
}

fn run_batch(kind: Kind, common: &Common, dir: &Path) -> Vec<CmdOutput> {
    let mut files: Vec<PathBuf> = match std::fs::read_dir(dir) {
        Ok(rd) => rd
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension().is_some_and(|x| x == "json")
                    && !p.to_string_lossy().ends_with(".meta.json")
            })
            .collect(),
        Err(e) => {
            return vec![CmdOutput::fail(
                EXIT_USAGE,
                format!("cannot read {}: {e}", dir.display()),
            )]
        }
    };
    files.sort();
    if kind == Kind::Check {
        return vec![CmdOutput::fail(
            EXIT_USAGE,
            "check takes a single --scenario and --trace",
        )];
    }
    if let Some(out) = &common.out {
        if let Err(e) = std::fs::create_dir_all(out) {
            return vec![CmdOutput::fail(
                EXIT_USAGE,
                format!("cannot create {}: {e}", out.display()),
            )];
        }
    }
    // runs share nothing mutable, so each scenario gets its own thread
    std::thread::scope(|s| {
        let handles: Vec<_> = files
            .iter()
            .map(|f| {
                let out = common.out.as_ref().map(|d| {
                    let stem = f
                        .file_stem()
                        .map(|s| s.to_string_lossy().into_owned())
                        .unwrap_or_default();
                    d.join(format!("{stem}.{}", kind.extension()))
                });
                s.spawn(move || {
                    let mut r = run_one(kind, common, f, out);
                    if !common.quiet {
                        r.stdout = format!("== {}\n{}", f.display(), r.stdout);
                    }
                    r
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("scenario worker panicked"))
            .collect()
    })
}

fn load(common: &Common, path: &Path) -> Result<LoadedScenario, ScenarioError> {
    let mut loaded = load_scenario(path)?;
    if let Some(dt) = common.dt {
        loaded.scenario = loaded
            .scenario
            .with_dt(dt)
            .map_err(|e| ScenarioError::Validation(e.to_string()))?;
    }
    if let Some(seed) = common.seed {
        loaded.analysis.battery.seed = seed;
    }
    if let Some(cap) = common.u_sq_cap {
        if !(cap >= 0.0 && cap.is_finite()) {
            return Err(ScenarioError::Validation(format!(
                "--u-sq-cap must be nonnegative, got {cap}"
            )));
        }
        loaded.analysis.u_sq_cap = Some(cap);
    }
    Ok(loaded)
}

fn run_one(kind: Kind, common: &Common, path: &Path, out: Option<PathBuf>) -> CmdOutput {
    let loaded = match load(common, path) {
        Ok(l) => l,
        Err(e) => return CmdOutput::fail(EXIT_USAGE, format!("{}: {e}", path.display())),
    };
    match kind {
        Kind::Analyze => cmd_analyze(&loaded, out.as_deref(), common.quiet),
        Kind::Simulate => match out {
            Some(o) => cmd_simulate(&loaded, &o, common.quiet),
            None => CmdOutput::fail(EXIT_USAGE, "simulate requires --out"),
        },
        Kind::Bounds => cmd_bounds(
            &loaded,
            common.trace.as_deref(),
            out.as_deref(),
            common.quiet,
        ),
        Kind::Check => match &common.trace {
            Some(t) => cmd_check(&loaded, t, common.quiet),
            None => CmdOutput::fail(EXIT_USAGE, "check requires --trace"),
        },
    }
}

/// UTC time as `YYYY-MM-DDTHH:MM:SSZ`.
pub fn timestamp_now() -> String {
    let secs = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs() as i64)
        .unwrap_or(0);
    let (days, rem) = (secs.div_euclid(86_400), secs.rem_euclid(86_400));
    // civil-from-days
    let z = days + 719_468;
    let era = z.div_euclid(146_097);
    let doe = z - era * 146_097;
    let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let d = doy - (153 * mp + 2) / 5 + 1;
    let m = if mp < 10 { mp + 3 } else { mp - 9 };
    let y = yoe + era * 400 + i64::from(m <= 2);
    format!(
        "{y:04}-{m:02}-{d:02}T{:02}:{:02}:{:02}Z",
        rem / 3600,
        rem % 3600 / 60,
        rem % 60
    )
}

fn write_file(path: &Path, text: &str) -> Result<(), String> {
    std::fs::write(path, text).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

/// Serialized analysis report with the given timestamp.
pub fn analysis_report(loaded: &LoadedScenario, timestamp: &str) -> (String, i32) {
    let analysis = analyze(loaded);
    let mut text = serde_json::to_string_pretty(&analysis.to_json(loaded, timestamp))
        .expect("report serializes");
    text.push('\n');
    (text, analysis.exit_code())
}

fn cmd_analyze(loaded: &LoadedScenario, out: Option<&Path>, quiet: bool) -> CmdOutput {
    let analysis = analyze(loaded);
    let mut text = serde_json::to_string_pretty(&analysis.to_json(loaded, &timestamp_now()))
        .expect("report serializes");
    text.push('\n');
    let mut res = CmdOutput {
        code: analysis.exit_code(),
        ..Default::default()
    };
    match out {
        Some(p) => {
            if let Err(e) = write_file(p, &text) {
                return CmdOutput::fail(EXIT_USAGE, e);
            }
            if !quiet {
                match &analysis.verdict {
                    Some(v) => {
                        let _ = writeln!(res.stdout, "verdict: {:?}", v.kind);
                        for c in &v.conditions {
                            let _ = writeln!(
                                res.stdout,
                                "  {:<40} {}  {}",
                                c.name,
                                if c.pass { "pass" } else { "FAIL" },
                                c.detail
                            );
                        }
                    }
                    None => {
                        let _ = writeln!(res.stdout, "verdict: unavailable");
                    }
                }
            }
        }
        None => res.stdout = text,
    }
    for e in &analysis.errors {
        let _ = writeln!(res.stderr, "error: {e}");
    }
    res
}

/// Path of the metadata sidecar for a trace.
pub fn meta_path(trace: &Path) -> PathBuf {
    let mut s = trace.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Writes the CSV trace and its sidecar.
pub fn write_trace(trace: &SimulationTrace, digest: &str, path: &Path) -> Result<(), String> {
    write_file(path, &trace.to_csv())?;
    let meta = TraceMeta {
        digest: digest.to_string(),
        ..trace.meta.clone()
    };
    let mut text = serde_json::to_string_pretty(&meta).expect("meta serializes");
    text.push('\n');
    write_file(&meta_path(path), &text)
}

fn cmd_simulate(loaded: &LoadedScenario, out: &Path, quiet: bool) -> CmdOutput {
    let (trace, code) = match simulate(&loaded.scenario) {
        Ok(t) => (t, EXIT_OK),
        Err(SimError::Diverged { trace, .. }) => (*trace, EXIT_FAILURE),
        Err(e @ SimError::Config(_)) => return CmdOutput::fail(EXIT_USAGE, e.to_string()),
        Err(e) => return CmdOutput::fail(EXIT_FAILURE, e.to_string()),
    };
    if let Err(e) = write_trace(&trace, &loaded.digest, out) {
        return CmdOutput::fail(EXIT_USAGE, e);
    }
    let mut res = CmdOutput {
        code,
        ..Default::default()
    };
    if let RunStatus::Diverged { t } = trace.meta.status {
        let _ = writeln!(res.stderr, "diverged at t = {t}");
    }
    if quiet {
        return res;
    }
    let last = trace.records.last().expect("trace has a first row");
    let max_e = trace
        .records
        .iter()
        .map(|r| r.e)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut summary = json!({
        "status": trace.meta.status,
        "final_t": jnum(last.t),
        "final_state_norm": jnum(last.x.norm()),
        "final_abs_u": jnum(last.u.abs()),
        "max_energy": jnum(max_e),
        "min_g_floor": jnum(trace.min_floor()),
        "popov_violation_at": trace.ledger.violated_at().map(jnum),
    });
    let sc = &loaded.scenario;
    if let Some(delta) = loaded.analysis.delta {
        if sc.schedule.marked().len() >= 2 && trace.records.iter().all(|r| r.u == 0.0) {
            if let Ok(c) = contraction_check(&trace.state_norms(), sc.schedule.marked(), delta) {
                summary["contraction_ratios"] = c
                    .ratios
                    .iter()
                    .map(|r| jnum(r.2.unwrap_or(f64::NAN)))
                    .collect();
            }
        }
    }
    res.stdout = serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n";
    res
}

fn cmd_bounds(
    loaded: &LoadedScenario,
    trace: Option<&Path>,
    out: Option<&Path>,
    quiet: bool,
) -> CmdOutput {
    let rows;
    let source = match (trace, loaded.analysis.u_sq_cap) {
        (Some(t), _) => match read_checked_trace(loaded, t) {
            Ok(r) => {
                rows = r;
                InputSource::Trace(&rows)
            }
            Err(e) => return e,
        },
        (None, Some(cap)) => InputSource::Cap(cap),
        (None, None) => InputSource::Cap(f64::NAN),
    };
    let (table, notes) = match bounds_table(loaded, source) {
        Ok(t) => t,
        Err(e) => return CmdOutput::fail(EXIT_FAILURE, e),
    };
    if table.iter().any(|r| r.kind == "max_residence")
        && trace.is_none()
        && loaded.analysis.u_sq_cap.is_none()
    {
        return CmdOutput::fail(EXIT_USAGE, "parameter error: maximum residence bounds need --trace or an input cap (--u-sq-cap or analysis.u_sq_cap)");
    }
    let mut res = CmdOutput::default();
    if let Some(p) = out {
        let v = json!({
            "rows": table.iter().map(|r| json!({
                "kind": r.kind, "t": jnum(r.t), "mode": r.mode, "value": r.value.map(jnum), "inputs": r.inputs,
            })).collect::<Vec<_>>(),
            "notes": notes,
        });
        if let Err(e) = write_file(
            p,
            &(serde_json::to_string_pretty(&v).expect("serializes") + "\n"),
        ) {
            return CmdOutput::fail(EXIT_USAGE, e);
        }
    }
    if !quiet {
        for r in &table {
            let value = match r.value {
                Some(v) if v.is_infinite() => "infinity".to_string(),
                Some(v) => format!("{v:.3}"),
                None => "undefined".to_string(),
            };
            let _ = writeln!(
                res.stdout,
                "{:<14} t = {:<10} mode {:<3} {:>12}   {}",
                r.kind, r.t, r.mode, value, r.inputs
            );
        }
        for n in &notes {
            let _ = writeln!(res.stdout, "{n}");
        }
    }
    res
}

fn read_checked_trace(
    loaded: &LoadedScenario,
    trace: &Path,
) -> Result<Vec<crate::simulator::CsvRow>, CmdOutput> {
    let meta_file = meta_path(trace);
    let meta: TraceMeta = std::fs::read_to_string(&meta_file)
        .map_err(|e| format!("cannot read {}: {e}", meta_file.display()))
        .and_then(|t| serde_json::from_str(&t).map_err(|e| format!("{}: {e}", meta_file.display())))
        .map_err(|e| CmdOutput::fail(EXIT_USAGE, e))?;
    if meta.digest != loaded.digest {
        return Err(CmdOutput::fail(
            EXIT_USAGE,
            format!(
                "provenance error: trace digest {} does not match scenario digest {}",
                meta.digest, loaded.digest
            ),
        ));
    }
    let text = std::fs::read_to_string(trace).map_err(|e| {
        CmdOutput::fail(EXIT_USAGE, format!("cannot read {}: {e}", trace.display()))
    })?;
    let rows = read_trace_csv(&text)
        .map_err(|e| CmdOutput::fail(EXIT_USAGE, format!("{}: {e}", trace.display())))?;
    if rows.is_empty() {
        return Err(CmdOutput::fail(EXIT_USAGE, "trace has no rows"));
    }
    Ok(rows)
}

fn cmd_check(loaded: &LoadedScenario, trace: &Path, quiet: bool) -> CmdOutput {
    let rows = match read_checked_trace(loaded, trace) {
        Ok(r) => r,
        Err(e) => return e,
    };
    let results = check_trace(loaded, &rows);
    let failed = results.iter().any(|r| r.pass == Some(false));
    let mut res = CmdOutput {
        code: if failed { EXIT_FAILURE } else { EXIT_OK },
        ..Default::default()
    };
    if !quiet {
        for r in &results {
            let status = match r.pass {
                Some(true) => "pass",
                Some(false) => "FAIL",
                None => "n/a",
            };
            let _ = writeln!(res.stdout, "{:<22} {:<5} {}", r.name, status, r.detail);
        }
    }
    res
}
