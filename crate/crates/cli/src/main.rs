//! `holofol` batch runner.

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use holofol::brownian::{sample_paths, write_paths_csv};
use holofol::config::{ProfileChoice, RunConfig};
use holofol::holonomy::{holonomy_step, write_frames_csv, CocycleFrame};
use holofol::linear_model::{HalfPlane, LeafChart};
use holofol::lyapunov::{estimate_spectrum, integrability_scan, report_summary, scan_summary, write_report_csv, write_scan_csv};
use holofol::metrics::{
    check_derivative_condition, check_integrability, default_epsilon_sequence, disc_volume, eta_estimate,
    gaussian_curvature_default, LeafDensity, Verdict,
};
use num_complex::Complex64;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "holofol", version, about = "Leafwise Brownian motion and holonomy experiments near linear singularities")]
struct Cli {
    /// Master seed; falls back to HOLOFOL_SEED, then to the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (output does not depend on this).
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// key=value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Write output here instead of stdout.
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Chart polygon of the base point: half-planes, boundary distance at 0, eta interval.
    Model(Overrides),
    /// Growth, integrability, curvature and volume checks for the configured profile.
    VerifyMetric(Overrides),
    /// Sample leafwise Brownian paths and dump them as CSV.
    Sample(Overrides),
    /// Holonomy frames along one sampled path at the configured times.
    Cocycle(Overrides),
    /// Lyapunov spectrum of the holonomy cocycle.
    Lyapunov(Overrides),
    /// Truncated means of F over a grid of inner cutoffs.
    Integrability(Overrides),
    /// Configuration utilities.
    Config {
        #[command(subcommand)]
        action: ConfigAction,
    },
}

#[derive(Subcommand, Debug)]
enum ConfigAction {
    /// Print the effective configuration in canonical form.
    Dump(Overrides),
}

#[derive(clap::Args, Debug)]
struct Overrides {
    /// KEY=VALUE assignments applied after the config file.
    #[arg(value_name = "KEY=VALUE")]
    assignments: Vec<String>,
}

enum Failure {
    Usage(String),
    Run(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Run(e)
    }
}

impl From<holofol::Error> for Failure {
    fn from(e: holofol::Error) -> Self {
        Failure::Run(e.into())
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Run(e.into())
    }
}

fn load_config(cli: &Cli, overrides: &Overrides) -> Result<RunConfig, Failure> {
    let mut cfg = RunConfig::default();
    if let Ok(env_seed) = std::env::var("HOLOFOL_SEED") {
        cfg.set("seed", &env_seed).map_err(|e| Failure::Usage(format!("HOLOFOL_SEED: {e}")))?;
    }
    if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let file_cfg = RunConfig::parse(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
        let env_seed = cfg.seed;
        cfg = file_cfg;
        if !text.lines().any(|l| l.trim_start().starts_with("seed")) {
            cfg.seed = env_seed;
        }
    }
    for a in &overrides.assignments {
        cfg.apply_assignment(a).map_err(|e| Failure::Usage(e.to_string()))?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if cfg.profile == ProfileChoice::Accelerating && !(cfg.delta > 0.0 && cfg.delta < 1.0) {
        return Err(Failure::Usage(format!("delta must lie in (0, 1), got {}", cfg.delta)));
    }
    Ok(cfg)
}

fn output(cli: &Cli) -> Result<Box<dyn Write>, Failure> {
    Ok(match &cli.output {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn inequality(h: &HalfPlane) -> String {
    let term = |c: f64, var: &str| match c {
        1.0 => var.to_string(),
        -1.0 => format!("-{var}"),
        _ => format!("{c}*{var}"),
    };
    let mut lhs = String::new();
    if h.s != 0.0 {
        lhs = term(h.s, "u");
    }
    if h.t != 0.0 {
        let v = term(-h.t, "v");
        if lhs.is_empty() {
            lhs = v;
        } else if let Some(rest) = v.strip_prefix('-') {
            lhs = format!("{lhs} - {rest}");
        } else {
            lhs = format!("{lhs} + {v}");
        }
    }
    format!("{lhs} < {}", h.bound)
}

fn cmd_model(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), Failure> {
    let model = cfg.model()?;
    let chart = LeafChart::at(&model, cfg.point()?)?;
    writeln!(out, "coord,s,t,bound,constraint")?;
    for h in chart.half_planes() {
        writeln!(out, "{},{},{},{},{}", h.coord + 1, h.s, h.t, h.bound, inequality(h))?;
    }
    let eta = eta_estimate(&chart, &model)?;
    writeln!(out, "# boundary_distance_at_0={}", chart.boundary_distance(Complex64::new(0.0, 0.0))?)?;
    writeln!(out, "# eta_lower={}", eta.lower)?;
    writeln!(out, "# eta_upper={}", eta.upper)?;
    Ok(())
}

fn cmd_verify_metric(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), Failure> {
    let profile = cfg.metric_profile()?;
    let mut failures = Vec::new();

    let deriv = check_derivative_condition(&profile, 1e-300, 0.1, 64)?;
    writeln!(out, "derivative_condition: {} (fitted c = {})", pass_label(deriv.passes), deriv.fitted_c)?;
    if !deriv.passes {
        failures.push("derivative growth condition fails");
    }

    let integ = check_integrability(&profile, &default_epsilon_sequence())?;
    for (name, v, reason) in [
        ("first", &integ.first, "first integrability integral diverges"),
        ("second", &integ.second, "second integrability integral diverges"),
    ] {
        writeln!(out, "{name}_integral: {:?}", v.verdict)?;
        if v.verdict != Verdict::Converges {
            failures.push(reason);
        }
    }

    let model = cfg.model()?;
    let chart = LeafChart::at(&model, cfg.point()?)?;
    let d0 = chart.boundary_distance(Complex64::new(0.0, 0.0))?;
    let density = LeafDensity::new(chart, profile);
    let mut curvature_ok = true;
    for k in 0..8 {
        let z = Complex64::from_polar(0.5 * d0, k as f64 * std::f64::consts::FRAC_PI_4);
        let curv = gaussian_curvature_default(&density, z)?;
        curvature_ok &= curv.is_finite();
        writeln!(out, "curvature zeta={}: {curv}", holofol::complex::format_complex(z))?;
    }
    if !curvature_ok {
        failures.push("curvature is not finite");
    }
    let vol = disc_volume(&density, 0.25, 48);
    match &vol {
        Ok(v) => writeln!(out, "disc_volume(0.25): {v}")?,
        Err(e) => writeln!(out, "disc_volume(0.25): {e}")?,
    }
    if vol.is_err() {
        failures.push("disc volume unavailable");
    }

    for f in &failures {
        writeln!(out, "FAIL: {f}")?;
    }
    out.flush()?;
    if let Some(first) = failures.first() {
        return Err(Failure::Run(anyhow!("{first}")));
    }
    writeln!(out, "all checks pass")?;
    Ok(())
}

fn pass_label(b: bool) -> &'static str {
    if b {
        "pass"
    } else {
        "fail"
    }
}

fn cmd_sample(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), Failure> {
    let model = cfg.model()?;
    let chart = LeafChart::at(&model, cfg.point()?)?;
    let density = cfg.density_rule()?.build(chart)?;
    let paths = sample_paths(&density, &cfg.sampler()?, cfg.first_path, cfg.n_paths);
    write_paths_csv(out, &paths)?;
    Ok(())
}

fn cmd_cocycle(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), Failure> {
    let model = cfg.model()?;
    let x = cfg.point()?;
    let chart = LeafChart::at(&model, x.clone())?;
    let density = cfg.density_rule()?.build(chart)?;
    let t_max = cfg.times.iter().copied().fold(0.0, f64::max);
    if cfg.times.iter().any(|t| *t < 0.0) {
        return Err(Failure::Usage("times must be nonnegative".into()));
    }
    let sampler = cfg.sampler()?.with_horizon(t_max.max(f64::MIN_POSITIVE))?;
    let path = holofol::brownian::sample_path(&density, &sampler, cfg.first_path);
    if path.final_g_time() < t_max {
        return Err(holofol::Error::PathTooShort { covered: path.final_g_time(), needed: t_max }.into());
    }
    let rows: Vec<(f64, CocycleFrame)> = cfg
        .times
        .iter()
        .map(|&t| Ok((t, holonomy_step(&model, &x, path.node_at(t)?.zeta)?)))
        .collect::<holofol::Result<_>>()?;
    write_frames_csv(out, &rows)?;
    Ok(())
}

fn cmd_lyapunov(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), Failure> {
    let report = estimate_spectrum(
        &cfg.model()?,
        &cfg.initial_law()?,
        &cfg.density_rule()?,
        &cfg.sampler()?,
        cfg.n_paths,
        cfg.horizon,
        cfg.qr_stride,
    )?;
    write_report_csv(out, &report)?;
    eprint!("{}", report_summary(&report));
    Ok(())
}

fn cmd_integrability(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), Failure> {
    let scans = integrability_scan(
        &cfg.model()?,
        &cfg.scan_profiles()?,
        &cfg.epsilons,
        cfg.outer,
        &cfg.sampler()?,
        cfg.n_paths,
    )?;
    write_scan_csv(out, &scans)?;
    eprint!("{}", scan_summary(&scans));
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Failure> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(Failure::Usage("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Run(anyhow!("thread pool: {e}")))?;
    }
    let (overrides, f): (&Overrides, Runner) = match &cli.command {
        Command::Model(o) => (o, cmd_model),
        Command::VerifyMetric(o) => (o, cmd_verify_metric),
        Command::Sample(o) => (o, cmd_sample),
        Command::Cocycle(o) => (o, cmd_cocycle),
        Command::Lyapunov(o) => (o, cmd_lyapunov),
        Command::Integrability(o) => (o, cmd_integrability),
        Command::Config { action: ConfigAction::Dump(o) } => {
            let cfg = load_config(cli, o)?;
            let mut out = output(cli)?;
            out.write_all(cfg.dump().as_bytes())?;
            out.flush()?;
            return Ok(());
        }
    };
    let cfg = load_config(cli, overrides)?;
    let mut out = output(cli)?;
    f(&cfg, &mut *out)?;
    out.flush()?;
    Ok(())
}

type Runner = fn(&RunConfig, &mut dyn Write) -> Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
