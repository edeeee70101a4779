//! `voltune`: run controller characterization and link case-study
//! experiments against the simulated platform and write CSV results.

use std::fs;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use voltune_core::bus::write_trace_csv as write_bus_trace_csv;
use voltune_core::harness::{
    build_manager, emit_trace_csv, read_points_csv, run_case_study, run_interval_matrix,
    run_transition, savings_report, write_file, write_points_csv, CaseStudySweep, SavingsReport,
    SweepMetadata, TransitionExperiment, DECREASE_TARGETS, INCREASE_SOURCES,
};
use voltune_core::link::{LinkCalibration, LinkSpeed, SweepMode};
use voltune_core::manager::{parse_script, write_status_csv};
use voltune_core::settling::{read_trace_csv, settling_time};
use voltune_core::{ControlPath, PlatformProfile, SettlingParams};

#[derive(Debug, Parser)]
#[command(name = "voltune", version, about = "PMBus voltage-control experiment runner")]
struct Cli {
    /// Platform profile (TOML). Defaults to the built-in kc705 profile.
    #[arg(long, global = true, value_name = "FILE")]
    profile: Option<PathBuf>,
    /// Link calibration (TOML). Defaults to the built-in kc705-gtx-paper file.
    #[arg(long, global = true, value_name = "FILE")]
    calibration: Option<PathBuf>,
    /// Seed for the stochastic link models.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, global = true, value_name = "DIR", default_value = ".")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Time voltage transitions on one rail.
    Transition(TransitionArgs),
    /// Mean readback interval for each control path and bus clock.
    Intervals(IntervalArgs),
    /// Undervolting sweep of the transceiver rail with link metrics.
    CaseStudy(CaseStudyArgs),
    /// BER-aware power savings from a case-study CSV.
    Savings(SavingsArgs),
    /// Execute a request script and log statuses and bus traffic.
    Replay(ReplayArgs),
    /// Settling time of a recorded voltage trace.
    Settle(SettleArgs),
}

#[derive(Debug, Clone, Copy, Args)]
struct BusArgs {
    /// Control path: hardware or software.
    #[arg(long, default_value = "hardware")]
    path: ControlPath,
    /// Bus clock in Hz.
    #[arg(long, default_value_t = 400_000)]
    scl: u32,
}

#[derive(Debug, Clone, Copy, Args)]
struct SettleParamArgs {
    /// Consecutive in-band samples required.
    #[arg(long)]
    window: Option<usize>,
    /// Band half-width, percent of the stable average.
    #[arg(long)]
    band: Option<f64>,
}

impl SettleParamArgs {
    fn apply(&self, mut p: SettlingParams) -> SettlingParams {
        if let Some(n) = self.window {
            p.window = n;
        }
        if let Some(x) = self.band {
            p.band_percent = x;
        }
        p
    }
}

#[derive(Debug, Args)]
struct TransitionArgs {
    #[arg(long, required_unless_present = "sweep")]
    from: Option<f64>,
    #[arg(long, required_unless_present = "sweep")]
    to: Option<f64>,
    /// Run the downward and upward characterization sweeps instead.
    #[arg(long, conflicts_with_all = ["from", "to"])]
    sweep: bool,
    #[arg(long, default_value_t = 9)]
    lane: u8,
    /// Give up after this many seconds of simulated time.
    #[arg(long, default_value_t = 20e-3)]
    horizon: f64,
    #[command(flatten)]
    bus: BusArgs,
    #[command(flatten)]
    settle: SettleParamArgs,
}

#[derive(Debug, Args)]
struct IntervalArgs {
    #[arg(long, default_value_t = 6)]
    lane: u8,
    #[arg(long, default_value_t = 100)]
    samples: usize,
}

#[derive(Debug, Args)]
struct CaseStudyArgs {
    /// Sweep description (TOML); flags override its values.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Line rate, e.g. 10, 7.5, 5 or 2.5.
    #[arg(long)]
    speed: Option<LinkSpeed>,
    /// both, rx-swept or tx-swept.
    #[arg(long)]
    mode: Option<SweepMode>,
    /// Run every (speed, mode) pair in the calibration, concurrently.
    #[arg(long, conflicts_with_all = ["speed", "mode"])]
    all: bool,
    #[arg(long)]
    step: Option<f64>,
}

#[derive(Debug, Args)]
struct SavingsArgs {
    /// Case-study points CSV.
    points: PathBuf,
    #[arg(long, default_value = "both")]
    mode: SweepMode,
    #[arg(long, default_value_t = 1.0)]
    baseline: f64,
}

#[derive(Debug, Args)]
struct ReplayArgs {
    /// Lines of `opcode lane [value]`.
    script: PathBuf,
    #[command(flatten)]
    bus: BusArgs,
}

#[derive(Debug, Args)]
struct SettleArgs {
    /// `time_s,voltage_v` CSV.
    trace: PathBuf,
    #[command(flatten)]
    settle: SettleParamArgs,
}

/// Case-study config file. Missing keys fall back to the standard sweep.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepFile {
    speed_gbps: Option<LinkSpeed>,
    mode: Option<SweepMode>,
    start_v: Option<f64>,
    stop_v: Option<f64>,
    step_v: Option<f64>,
    seed: Option<u64>,
    lane: Option<u8>,
    path: Option<ControlPath>,
    scl_hz: Option<u32>,
    settling: Option<SettlingParams>,
    horizon_s: Option<f64>,
}

#[derive(Serialize)]
struct CaseStudyRecord<'a> {
    metadata: &'a SweepMetadata,
    savings: &'a SavingsReport,
}

struct Env {
    profile: PlatformProfile,
    out: PathBuf,
}

fn load_profile(path: Option<&Path>) -> Result<PlatformProfile> {
    match path {
        Some(p) => PlatformProfile::load(p).with_context(|| format!("loading profile {}", p.display())),
        None => Ok(PlatformProfile::kc705()),
    }
}

fn load_calibration(path: Option<&Path>) -> Result<LinkCalibration> {
    match path {
        Some(p) => LinkCalibration::load(p)
            .with_context(|| format!("loading calibration {}", p.display())),
        None => Ok(LinkCalibration::kc705_gtx()),
    }
}

fn volts_tag(v: f64) -> String {
    format!("{v:.3}").replace('.', "p")
}

fn transition(env: &Env, a: &TransitionArgs) -> Result<()> {
    let pairs: Vec<(f64, f64)> = if a.sweep {
        DECREASE_TARGETS
            .iter()
            .map(|t| (1.0, *t))
            .chain(INCREASE_SOURCES.iter().map(|s| (*s, 1.0)))
            .collect()
    } else {
        vec![(a.from.expect("clap enforces --from"), a.to.expect("clap enforces --to"))]
    };
    let mut rows = Vec::new();
    for (from, to) in pairs {
        let exp = TransitionExperiment {
            lane: a.lane,
            path: a.bus.path,
            scl_hz: a.bus.scl,
            settling: a.settle.apply(SettlingParams::default()),
            horizon_s: a.horizon,
            ..TransitionExperiment::new(from, to)
        };
        let r = run_transition(&env.profile, &exp)
            .with_context(|| format!("transition {from} V -> {to} V"))?;
        let name = format!("transition_{}_{}.csv", volts_tag(from), volts_tag(to));
        emit_trace_csv(&env.out.join(&name), &r.trace)?;
        if !a.sweep {
            println!("from_v = {from}\nto_v = {to}\nlane = {}", a.lane);
            println!("path = {}\nscl_hz = {}", a.bus.path, a.bus.scl);
            print!("{}", r.report);
            println!("trace = {}", env.out.join(&name).display());
        }
        rows.push((from, to, r));
    }
    if a.sweep {
        let path = env.out.join("transitions.csv");
        write_file(&path, |w| {
            writeln!(w, "from_v,to_v,settling_time_s,samples,stable_average_v,set_transactions")?;
            for (from, to, r) in &rows {
                let t = r.settling_time().map(|t| t.to_string()).unwrap_or_default();
                writeln!(
                    w,
                    "{from},{to},{t},{},{},{}",
                    r.report.samples, r.report.stable_average, r.set_sequence_len
                )?;
            }
            Ok(())
        })?;
        for (from, to, r) in &rows {
            let t = r.settling_time().map_or("absent".into(), |t| format!("{:.4} ms", t * 1e3));
            println!("{from:.1} V -> {to:.1} V: {t}");
        }
        println!("summary = {}", path.display());
    }
    Ok(())
}

fn intervals(env: &Env, a: &IntervalArgs) -> Result<()> {
    let rows = run_interval_matrix(&env.profile, a.lane, a.samples)?;
    let path = env.out.join("intervals.csv");
    write_file(&path, |w| {
        writeln!(w, "path,scl_hz,mean_interval_s,model_interval_s")?;
        for r in &rows {
            writeln!(w, "{},{},{},{}", r.path, r.scl_hz, r.mean_interval_s, r.model_interval_s)?;
        }
        Ok(())
    })?;
    for r in &rows {
        println!("{:<8} {:>4} kHz  {:.3} ms", r.path, r.scl_hz / 1000, r.mean_interval_s * 1e3);
    }
    Ok(())
}

fn sweeps_from(a: &CaseStudyArgs, seed: Option<u64>, cal: &LinkCalibration) -> Result<Vec<CaseStudySweep>> {
    let file: SweepFile = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => SweepFile::default(),
    };
    let Some(seed) = seed.or(file.seed) else {
        bail!("case-study needs a seed: pass --seed or set `seed` in the config file");
    };
    let pairs: Vec<(LinkSpeed, SweepMode)> = if a.all {
        cal.ber.iter().map(|e| (e.speed, e.mode)).collect()
    } else {
        vec![(
            a.speed.or(file.speed_gbps).unwrap_or(LinkSpeed::G10),
            a.mode.or(file.mode).unwrap_or(SweepMode::Both),
        )]
    };
    Ok(pairs
        .into_iter()
        .map(|(speed, mode)| {
            let d = CaseStudySweep::new(speed, mode, seed);
            CaseStudySweep {
                start_v: file.start_v.unwrap_or(d.start_v),
                stop_v: file.stop_v.unwrap_or(d.stop_v),
                step_v: a.step.or(file.step_v).unwrap_or(d.step_v),
                lane: file.lane.unwrap_or(d.lane),
                path: file.path.unwrap_or(d.path),
                scl_hz: file.scl_hz.unwrap_or(d.scl_hz),
                settling: file.settling.unwrap_or(d.settling),
                horizon_s: file.horizon_s.unwrap_or(d.horizon_s),
                ..d
            }
        })
        .collect())
}

fn case_study(env: &Env, cal: &LinkCalibration, a: &CaseStudyArgs, seed: Option<u64>) -> Result<()> {
    let sweeps = sweeps_from(a, seed, cal)?;
    // Each sweep owns its simulator stack, so they run side by side.
    let results: Vec<_> = std::thread::scope(|s| {
        let handles: Vec<_> = sweeps
            .iter()
            .map(|sw| s.spawn(|| run_case_study(&env.profile, cal, sw)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("sweep thread panicked")).collect()
    });
    for (sw, res) in sweeps.iter().zip(results) {
        let res = res.with_context(|| format!("case study {} {}", sw.speed, sw.mode))?;
        let stem = format!("case_study_{}g_{}", sw.speed.gbps(), sw.mode);
        let csv_path = env.out.join(format!("{stem}.csv"));
        write_file(&csv_path, |w| write_points_csv(w, &res.points).map_err(io::Error::other))?;
        let savings = savings_report(&res.points, sw.mode, sw.start_v)?;
        let record = toml::to_string(&CaseStudyRecord {
            metadata: &res.metadata,
            savings: &savings,
        })
        .context("serializing run metadata")?;
        let meta_path = env.out.join(format!("{stem}.toml"));
        write_file(&meta_path, |w| w.write_all(record.as_bytes()))?;
        println!(
            "{} {}: {} points, zero BER down to {} V ({:.2}% saved), seed {} -> {}",
            sw.speed,
            sw.mode,
            res.points.len(),
            savings.boundary.voltage,
            savings.boundary.percent_saved,
            sw.seed,
            csv_path.display()
        );
    }
    Ok(())
}

fn savings(a: &SavingsArgs) -> Result<()> {
    let f = fs::File::open(&a.points).with_context(|| format!("opening {}", a.points.display()))?;
    let points = read_points_csv(BufReader::new(f)).with_context(|| format!("reading {}", a.points.display()))?;
    let report = savings_report(&points, a.mode, a.baseline)?;
    print!("{}", toml::to_string(&report).context("serializing savings report")?);
    Ok(())
}

fn replay(env: &Env, a: &ReplayArgs) -> Result<bool> {
    let f = fs::File::open(&a.script).with_context(|| format!("opening {}", a.script.display()))?;
    let requests = parse_script(BufReader::new(f))?;
    let mut m = build_manager(&env.profile, a.bus.path, a.bus.scl)?;
    let mut statuses = Vec::with_capacity(requests.len());
    for req in requests {
        statuses.push(m.submit(req)?);
    }
    let status_path = env.out.join("replay_status.csv");
    write_file(&status_path, |w| write_status_csv(w, &statuses))?;
    let trace_path = env.out.join("replay_bus_trace.csv");
    write_file(&trace_path, |w| write_bus_trace_csv(w, m.bus().trace()))?;
    let failed = statuses.iter().filter(|s| !s.outcome.is_completed()).count();
    println!(
        "{} requests, {} failed, {} bus transactions, finished at {:.6} s",
        statuses.len(),
        failed,
        m.bus().trace().len(),
        m.now().as_secs_f64()
    );
    for s in statuses.iter().filter(|s| !s.outcome.is_completed()) {
        eprintln!("request {} on lane {}: {}", s.request.opcode, s.request.lane, s.outcome.label());
    }
    Ok(failed == 0)
}

fn settle(a: &SettleArgs) -> Result<()> {
    let f = fs::File::open(&a.trace).with_context(|| format!("opening {}", a.trace.display()))?;
    let trace = read_trace_csv(BufReader::new(f)).with_context(|| format!("reading {}", a.trace.display()))?;
    let report = settling_time(&trace, &a.settle.apply(SettlingParams::default()))?;
    print!("{report}");
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    let env = Env {
        profile: load_profile(cli.profile.as_deref())?,
        out: cli.out,
    };
    fs::create_dir_all(&env.out).with_context(|| format!("creating {}", env.out.display()))?;
    match &cli.command {
        Command::Transition(a) => transition(&env, a)?,
        Command::Intervals(a) => intervals(&env, a)?,
        Command::CaseStudy(a) => {
            let cal = load_calibration(cli.calibration.as_deref())?;
            case_study(&env, &cal, a, cli.seed)?
        }
        Command::Savings(a) => savings(a)?,
        Command::Replay(a) => return replay(&env, a),
        Command::Settle(a) => settle(a)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
