//! `swingcert`: simulate, certify and verify DAI-controlled swing networks.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde_json::json;
use swingcert::dos::{generate_schedule, DosSchedule, GenerateSpec};
use swingcert::dynamics::{simulate, DEFAULT_DT};
use swingcert::equilibrium::solve_equilibrium;
use swingcert::harness::{
    compare_table_2b, initial_state, paper_weight_attempt, run_case_study, verify_run, CaseStudyOptions,
    RunSummary,
};
use swingcert::lyapunov::{build_certificate, DosBudget, PAPER_TABLE_2B};
use swingcert::network::{build_network, NetworkConfig};
use swingcert::Error;

const THREADS_ENV: &str = "SWINGCERT_THREADS";

#[derive(Parser)]
#[command(name = "swingcert", version, about = "Lyapunov certificates for DAI frequency control under DoS")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the closed loop and write trajectory.csv
    Simulate(SimulateArgs),
    /// Compute the certificate constants and write them as JSON
    Certify(CertifyArgs),
    /// Simulate under a DoS schedule and check every certificate inequality
    Verify(VerifyArgs),
    /// Reproduce the four-bus case study
    CaseStudy(CaseStudyArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    /// DoS schedule JSON: {kappa, tau, intervals: [[start, duration], ...]}
    #[arg(long, conflicts_with = "dos_generate")]
    dos: Option<PathBuf>,
    /// Generate a schedule from "kappa,tau[,greedy|random[,seed]]"
    #[arg(long)]
    dos_generate: Option<String>,
    #[arg(long, default_value_t = DEFAULT_DT)]
    dt: f64,
    #[arg(long, default_value_t = 600.0)]
    t_end: f64,
    /// Write every n-th sample
    #[arg(long, default_value_t = 100)]
    stride: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CertifyArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, requires = "tau")]
    kappa: Option<f64>,
    #[arg(long, requires = "kappa")]
    tau: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    dos: PathBuf,
    #[arg(long, default_value_t = DEFAULT_DT)]
    dt: f64,
    #[arg(long, default_value_t = 600.0)]
    t_end: f64,
    #[arg(long, default_value_t = 100)]
    stride: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CaseStudyArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_DT)]
    dt: f64,
    #[arg(long, default_value_t = 600.0)]
    t_end: f64,
}

/// A run either succeeds, fails a check, or could not start.
enum Outcome {
    Pass,
    CheckFailed,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(2);
    }
    let result = match cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Certify(a) => cmd_certify(a),
        Command::Verify(a) => cmd_verify(a),
        Command::CaseStudy(a) => cmd_case_study(a),
    };
    match result {
        Ok(Outcome::Pass) => ExitCode::SUCCESS,
        Ok(Outcome::CheckFailed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

/// 2 for anything wrong with the inputs, 1 for numerical failures.
fn exit_code_for(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(
            Error::Infeasible(_)
            | Error::OnBoundary { .. }
            | Error::C1Nonpositive(_)
            | Error::NotPositiveDefinite(_)
            | Error::NoFeasibleEpsilons
            | Error::SecurityExit { .. },
        ) => 1,
        _ => 2,
    }
}

fn configure_threads() -> anyhow::Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .with_context(|| format!("{THREADS_ENV} must be a non-negative integer, got '{raw}'"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn load_config(path: &Path) -> anyhow::Result<NetworkConfig> {
    NetworkConfig::from_path(path)
        .map_err(|e| anyhow::Error::new(e).context(format!("reading {}", path.display())))
}

fn load_schedule(path: &Path) -> anyhow::Result<DosSchedule> {
    let s = DosSchedule::from_path(path)
        .map_err(|e| anyhow::Error::new(e).context(format!("reading {}", path.display())))?;
    s.ensure_valid()?;
    Ok(s)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")
        .with_context(|| format!("writing {}", path.display()))
}

fn cmd_simulate(a: SimulateArgs) -> anyhow::Result<Outcome> {
    let config = load_config(&a.config)?;
    let (net, ctrl) = build_network(&config)?;
    let schedule = match (&a.dos, &a.dos_generate) {
        (Some(path), _) => load_schedule(path)?,
        (None, Some(spec)) => {
            let g: GenerateSpec = spec.parse()?;
            generate_schedule(g.kappa, g.tau, a.t_end, g.seed, g.policy)?
        }
        (None, None) => DosSchedule::none(),
    };
    let x0 = initial_state(&config, &net)?;
    let traj = simulate(&net, &ctrl, &x0, &schedule, a.dt, a.t_end, None)?;
    std::fs::create_dir_all(&a.out)?;
    traj.write_csv(BufWriter::new(File::create(a.out.join("trajectory.csv"))?), a.stride)?;
    if a.dos_generate.is_some() {
        std::fs::write(a.out.join("schedule.json"), schedule.to_json()? + "\n")?;
    }
    println!("wrote {} samples to {}", traj.len(), a.out.join("trajectory.csv").display());
    Ok(Outcome::Pass)
}

fn cmd_certify(a: CertifyArgs) -> anyhow::Result<Outcome> {
    let config = load_config(&a.config)?;
    let (net, ctrl) = build_network(&config)?;
    let eq = solve_equilibrium(&net, &ctrl)?;
    let budget = a.kappa.zip(a.tau).map(|(kappa, tau)| DosBudget { kappa, tau });
    let cert = build_certificate(&net, &ctrl, &eq, budget)?;
    let reference = budget.unwrap_or(DosBudget { kappa: PAPER_TABLE_2B.kappa, tau: PAPER_TABLE_2B.tau });
    let attempt = paper_weight_attempt(&net, &ctrl, &eq, reference)?;
    let table = compare_table_2b(&cert, attempt);
    let provenance = if cert.theta_min_exact {
        format!("exact: {} vertices of the cosine box", cert.theta_min_evaluated)
    } else {
        format!("sampled, not exact: {} Latin-hypercube points", cert.theta_min_evaluated)
    };
    let doc = json!({
        "certificate": cert,
        "theta_minimum": provenance,
        "equilibrium": eq.report(&net),
        "table_2b": table,
    });
    write_json(&a.out, &doc)?;
    println!(
        "eps=({:.4e}, {:.4e}) c1={:.4e} c2={:.4e} c3={:.4e} c={:.4e} d={:.4e}",
        cert.eps1, cert.eps2, cert.c1, cert.c2, cert.c3, cert.c, cert.d
    );
    Ok(Outcome::Pass)
}

fn cmd_verify(a: VerifyArgs) -> anyhow::Result<Outcome> {
    let config = load_config(&a.config)?;
    let schedule = load_schedule(&a.dos)?;
    let (net, ctrl) = build_network(&config)?;
    let x0 = initial_state(&config, &net)?;
    let v = verify_run(&net, &ctrl, &x0, &schedule, a.dt, a.t_end)?;
    std::fs::create_dir_all(&a.out)?;
    v.trajectory.write_csv(BufWriter::new(File::create(a.out.join("trajectory.csv"))?), a.stride)?;
    write_json(
        &a.out.join("certificate.json"),
        &json!({ "certificate": v.certificate, "equilibrium": v.equilibrium.report(&net) }),
    )?;
    let summary = RunSummary::from(&v);
    write_json(&a.out.join("report.json"), &summary)?;
    for check in
        [&summary.decay.nominal, &summary.decay.dos, &summary.decay.envelope, &summary.state_envelope]
    {
        println!("{:<16} {:?}", check.name, check.status);
    }
    Ok(if summary.passed { Outcome::Pass } else { Outcome::CheckFailed })
}

fn cmd_case_study(a: CaseStudyArgs) -> anyhow::Result<Outcome> {
    let opts = CaseStudyOptions { dt: a.dt, t_end: a.t_end, ..CaseStudyOptions::default() };
    let report = run_case_study(&a.out, opts)?;
    for (run, summary) in [("nominal", &report.nominal), ("dos", &report.dos)] {
        for check in
            [&summary.decay.nominal, &summary.decay.dos, &summary.decay.envelope, &summary.state_envelope]
        {
            println!(
                "{run:<8} {:<16} {:?}{}",
                check.name,
                check.status,
                if check.vacuous { " (vacuous)" } else { "" }
            );
        }
    }
    println!(
        "final: max|omega|={:.3e} |xi-u*|={:.3e}",
        report.dos.convergence.max_abs_omega, report.dos.convergence.xi_error
    );
    println!("{}", report.table_2b.discrepancy);
    Ok(if report.passed { Outcome::Pass } else { Outcome::CheckFailed })
}
