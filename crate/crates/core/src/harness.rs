//! Checks the certificate inequalities along simulated trajectories and
//! reproduces the four-bus case study end to end.

use std::f64::consts::FRAC_PI_2;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DVector;
use serde::Serialize;

use crate::dos::{generate_schedule, DosSchedule, Policy};
use crate::dynamics::{simulate, SystemState, Trajectory, DEFAULT_DT};
use crate::equilibrium::{solve_equilibrium, Equilibrium, EquilibriumReport};
use crate::error::Result;
use crate::lyapunov::{
    build_certificate, build_certificate_with, min_eigenvalue_over_box, sector_bounds, w_bound_terms,
    Certificate, DosBudget, Epsilons, LyapunovMonitor, PaperConstants, PAPER_TABLE_2B,
};
use crate::network::{build_network, ControllerSetup, NetworkConfig, PowerNetwork};

/// Relative slack on every per-sample inequality.
pub const TOLERANCE: f64 = 1e-6;

/// Absolute slack on per-step decay checks, relative to `W(0)`. Once `W` has
/// decayed by twenty orders of magnitude its increments are rounding noise.
pub const NOISE_FLOOR: f64 = 1e-20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    /// The trajectory left the security region, where the bounds do not apply.
    NotApplicable,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Violation {
    pub t: f64,
    pub index: usize,
    pub value: f64,
    pub bound: f64,
}

/// Result of one inequality checked at every sample.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub status: Status,
    pub samples_checked: usize,
    pub first_violation: Option<Violation>,
    /// Largest `value / bound` seen (in log form for envelopes).
    pub worst_ratio: f64,
    /// The bound never drops below its initial value, so it cannot fail on a
    /// decaying trajectory.
    pub vacuous: bool,
    pub note: Option<String>,
}

impl CheckOutcome {
    fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            status: Status::Pass,
            samples_checked: 0,
            first_violation: None,
            worst_ratio: f64::NEG_INFINITY,
            vacuous: false,
            note: None,
        }
    }

    fn not_applicable(name: &str, note: String) -> Self {
        Self { status: Status::NotApplicable, note: Some(note), ..Self::new(name) }
    }

    fn record(&mut self, index: usize, t: f64, value: f64, bound: f64, ratio: f64, ok: bool) {
        self.samples_checked += 1;
        if ratio > self.worst_ratio {
            self.worst_ratio = ratio;
        }
        if !ok && self.first_violation.is_none() {
            self.status = Status::Fail;
            self.first_violation = Some(Violation { t, index, value, bound });
        }
    }

    pub fn passed(&self) -> bool {
        self.status == Status::Pass
    }
}

/// The three `W` checks.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayReport {
    /// `W(t_{k+1}) ≤ W(t_k)e^(−c·dt)` on communication steps.
    pub nominal: CheckOutcome,
    /// `W(t_{k+1}) ≤ W(t_k)e^(d·dt)` on outage steps.
    pub dos: CheckOutcome,
    /// `W(t) ≤ W(0)e^((c+d)κ)e^(−t(c−(c+d)/τ))`.
    pub envelope: CheckOutcome,
}

impl DecayReport {
    pub fn passed(&self) -> bool {
        self.nominal.passed() && self.dos.passed() && self.envelope.passed()
    }
}

/// First sample whose edge angles leave `[ρ − π/2, π/2 − ρ]`.
pub fn first_exit(net: &PowerNetwork, traj: &Trajectory, rho: f64) -> Option<(usize, f64)> {
    let bound = FRAC_PI_2 - rho;
    (0..traj.len()).find_map(|k| {
        let delta = DVector::from_column_slice(traj.delta(k));
        let worst = net.edge_angles(&delta).iter().fold(0.0_f64, |a, x| a.max(x.abs()));
        (worst > bound).then_some((k, traj.t[k]))
    })
}

/// Checks per-step decay in both modes and the global envelope for the
/// schedule's `(κ, τ)`. The trajectory must carry `W` samples.
pub fn check_decay(
    net: &PowerNetwork,
    traj: &Trajectory,
    cert: &Certificate,
    schedule: &DosSchedule,
) -> DecayReport {
    let names = ["nominal_decay", "dos_growth", "dos_envelope"];
    let na = |note: String| DecayReport {
        nominal: CheckOutcome::not_applicable(names[0], note.clone()),
        dos: CheckOutcome::not_applicable(names[1], note.clone()),
        envelope: CheckOutcome::not_applicable(names[2], note),
    };
    let Some(w) = traj.w.as_ref() else {
        return na("trajectory carries no Lyapunov samples".into());
    };
    if let Some((k, t)) = first_exit(net, traj, cert.rho) {
        return na(format!("trajectory left the security region at sample {k} (t={t})"));
    }

    let mut nominal = CheckOutcome::new(names[0]);
    let mut dos = CheckOutcome::new(names[1]);
    let mut envelope = CheckOutcome::new(names[2]);
    let w0 = w.first().copied().unwrap_or(0.0);
    let floor = NOISE_FLOOR * w0;

    for k in 0..traj.len().saturating_sub(1) {
        let dt = traj.t[k + 1] - traj.t[k];
        let (rate, out) = if traj.dos_active[k] { (cert.d, &mut dos) } else { (-cert.c, &mut nominal) };
        let bound = w[k] * (rate * dt).exp() * (1.0 + TOLERANCE);
        let ratio = if bound > 0.0 { w[k + 1] / bound } else { 0.0 };
        out.record(k + 1, traj.t[k + 1], w[k + 1], bound, ratio, w[k + 1] <= bound + floor);
    }

    // compared in log form: e^((c+d)κ) overflows for realistic d
    let (c, d) = (cert.c, cert.d);
    let (kappa, tau) = (schedule.kappa(), schedule.tau());
    let slope = c - (c + d) / tau;
    let offset = (c + d) * kappa;
    let t_end = traj.t.last().copied().unwrap_or(0.0);
    envelope.vacuous = offset - slope * (t_end - traj.t[0]) >= 0.0;
    if w0 > 0.0 {
        let ln_w0 = w0.ln();
        for (k, &wk) in w.iter().enumerate() {
            let ln_bound = ln_w0 + offset - slope * (traj.t[k] - traj.t[0]) + TOLERANCE.ln_1p();
            let ln_w = if wk > 0.0 { wk.ln() } else { f64::NEG_INFINITY };
            envelope.record(
                k,
                traj.t[k],
                wk,
                ln_bound.exp(),
                ln_w - ln_bound,
                ln_w <= ln_bound || wk <= floor,
            );
        }
    } else {
        for (k, &wk) in w.iter().enumerate() {
            envelope.record(k, traj.t[k], wk, 0.0, 0.0, wk <= floor);
        }
    }
    DecayReport { nominal, dos, envelope }
}

/// `‖z(t)‖ ≤ α e^(−βt)‖z(0)‖`, given `ln α` so that overflowing `α` is usable.
pub fn check_state_envelope(traj: &Trajectory, ln_alpha: f64, beta: f64) -> CheckOutcome {
    let mut out = CheckOutcome::new("state_envelope");
    let Some(z) = traj.z_norm.as_ref() else {
        return CheckOutcome::not_applicable("state_envelope", "trajectory carries no state norms".into());
    };
    let z0 = z.first().copied().unwrap_or(0.0);
    let t_end = traj.t.last().copied().unwrap_or(0.0) - traj.t[0];
    out.vacuous = ln_alpha - beta * t_end >= 0.0;
    for (k, &zk) in z.iter().enumerate() {
        let ln_bound = ln_alpha - beta * (traj.t[k] - traj.t[0]) + z0.ln() + TOLERANCE.ln_1p();
        let ln_z = if zk > 0.0 { zk.ln() } else { f64::NEG_INFINITY };
        let ok = ln_z <= ln_bound || (z0 == 0.0 && zk == 0.0);
        out.record(k, traj.t[k], zk, ln_bound.exp(), ln_z - ln_bound, ok);
    }
    out
}

/// Final-state convergence measures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Convergence {
    pub max_abs_omega: f64,
    pub xi_error: f64,
    pub converged: bool,
}

pub const CONVERGENCE_TOL: f64 = 1e-3;

pub fn convergence(traj: &Trajectory, eq: &Equilibrium) -> Convergence {
    let k = traj.len() - 1;
    let max_abs_omega = traj.omega(k).iter().fold(0.0_f64, |a, x| a.max(x.abs()));
    let xi_error = (DVector::from_column_slice(traj.xi(k)) - &eq.u_star).norm();
    Convergence {
        max_abs_omega,
        xi_error,
        converged: max_abs_omega < CONVERGENCE_TOL && xi_error < CONVERGENCE_TOL,
    }
}

/// Everything one verified run produces.
#[derive(Debug, Clone)]
pub struct Verification {
    pub equilibrium: Equilibrium,
    pub certificate: Certificate,
    pub trajectory: Trajectory,
    pub decay: DecayReport,
    pub state_envelope: CheckOutcome,
    pub convergence: Convergence,
}

impl Verification {
    pub fn passed(&self) -> bool {
        self.decay.passed() && self.state_envelope.passed()
    }
}

/// Solves, certifies for the schedule's budget, simulates with `W`
/// monitoring and runs every check.
pub fn verify_run(
    net: &PowerNetwork,
    ctrl: &ControllerSetup,
    x0: &SystemState,
    schedule: &DosSchedule,
    dt: f64,
    t_end: f64,
) -> Result<Verification> {
    schedule.ensure_valid()?;
    let eq = solve_equilibrium(net, ctrl)?;
    let budget = DosBudget { kappa: schedule.kappa(), tau: schedule.tau() };
    let cert = build_certificate(net, ctrl, &eq, Some(budget))?;
    verify_with_certificate(net, ctrl, &eq, &cert, x0, schedule, dt, t_end)
}

/// As [`verify_run`] with a given equilibrium and certificate.
#[allow(clippy::too_many_arguments)]
pub fn verify_with_certificate(
    net: &PowerNetwork,
    ctrl: &ControllerSetup,
    eq: &Equilibrium,
    cert: &Certificate,
    x0: &SystemState,
    schedule: &DosSchedule,
    dt: f64,
    t_end: f64,
) -> Result<Verification> {
    let monitor = LyapunovMonitor { net, ctrl, eq, eps: Epsilons::new(cert.eps1, cert.eps2) };
    let traj = simulate(net, ctrl, x0, schedule, dt, t_end, Some(&monitor))?;
    let decay = check_decay(net, &traj, cert, schedule);
    let state_envelope = if schedule.intervals().is_empty() {
        check_state_envelope(&traj, cert.alpha_nom.ln(), cert.beta_nom)
    } else {
        let env = cert.dos_envelope(DosBudget { kappa: schedule.kappa(), tau: schedule.tau() });
        check_state_envelope(&traj, env.ln_alpha_dos, env.beta_dos)
    };
    let convergence = convergence(&traj, eq);
    Ok(Verification {
        equilibrium: eq.clone(),
        certificate: cert.clone(),
        trajectory: traj,
        decay,
        state_envelope,
        convergence,
    })
}

/// Initial state from the config, or the unloaded rest state.
pub fn initial_state(config: &NetworkConfig, net: &PowerNetwork) -> Result<SystemState> {
    Ok(match config.initial_state(net)? {
        Some((delta, omega_g, xi)) => SystemState::new(delta, omega_g, xi, 0.0),
        None => SystemState::rest(net),
    })
}

/// Case-study settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CaseStudyOptions {
    pub dt: f64,
    pub t_end: f64,
    pub kappa: f64,
    pub tau: f64,
    /// Every `csv_stride`-th sample goes to `trajectory.csv` and `envelope.dat`.
    pub csv_stride: usize,
}

impl Default for CaseStudyOptions {
    fn default() -> Self {
        Self { dt: DEFAULT_DT, t_end: 600.0, kappa: 10.0, tau: 1.5, csv_stride: 100 }
    }
}

/// Computed constants at the published weights, kept even when infeasible.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PaperWeightAttempt {
    pub eps1: f64,
    pub eps2: f64,
    pub c1: f64,
    pub c2: f64,
    /// Raw minimum of `λ_min(K)` over the security region.
    pub c3: f64,
    /// `None` where the formula is undefined because `c₁ ≤ 0` or `c₃ ≤ 0`.
    pub c: Option<f64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub c1_positive: bool,
    pub c3_positive: bool,
    /// Error raised by the certificate builder at these weights.
    pub error: Option<String>,
}

/// Computed certificate side by side with the published constants.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table2bComparison {
    pub paper: PaperConstants,
    pub at_paper_weights: PaperWeightAttempt,
    /// Ratio computed/paper for `(c₁, c₂, c₃, c, α, β)` of the selected certificate.
    pub ratios_selected: [f64; 6],
    pub within_order_of_magnitude: bool,
    pub discrepancy: String,
}

pub fn paper_weight_attempt(
    net: &PowerNetwork,
    ctrl: &ControllerSetup,
    eq: &Equilibrium,
    budget: DosBudget,
) -> Result<PaperWeightAttempt> {
    let eps = Epsilons::new(PAPER_TABLE_2B.eps1, PAPER_TABLE_2B.eps2);
    let sector = sector_bounds(net, eq.rho)?;
    let (c1, c2) = w_bound_terms(net, ctrl, eps, &sector, eq.mu);
    let c3 = min_eigenvalue_over_box(net, ctrl, eps, eq.rho, true).value;
    let (c, alpha, beta, error) = match build_certificate_with(net, ctrl, eq, eps, Some(budget)) {
        Ok(cert) => {
            let env = cert.dos.expect("budget given");
            (Some(cert.c), Some(env.alpha_dos), Some(env.beta_dos), None)
        }
        Err(e) => (None, None, None, Some(e.to_string())),
    };
    Ok(PaperWeightAttempt {
        eps1: eps.eps1,
        eps2: eps.eps2,
        c1,
        c2,
        c3,
        c,
        alpha,
        beta,
        c1_positive: c1 > 0.0,
        c3_positive: c3 > 0.0,
        error,
    })
}

/// Compares a certificate (with DoS envelope) against the published table.
pub fn compare_table_2b(cert: &Certificate, attempt: PaperWeightAttempt) -> Table2bComparison {
    let p = PAPER_TABLE_2B;
    let env = cert.dos.unwrap_or_else(|| cert.dos_envelope(DosBudget { kappa: p.kappa, tau: p.tau }));
    let ratios = [
        cert.c1 / p.c1,
        cert.c2 / p.c2,
        cert.c3 / p.c3,
        cert.c / p.c,
        env.alpha_dos / p.alpha,
        env.beta_dos / p.beta,
    ];
    let within = ratios.iter().all(|r| r.is_finite() && *r >= 0.1 && *r <= 10.0);
    let mut discrepancy = String::from(
        "Exact reproduction is not claimed: the published security margin and the procedure used to \
         minimise over the security region are not stated. ",
    );
    if !attempt.c1_positive || !attempt.c3_positive {
        discrepancy.push_str(&format!(
            "At the published weights (eps1={}, eps2={}) the bounds implemented here give c1={:.4e} and \
             min lambda_min(K)={:.4e}, so no certificate exists there. ",
            attempt.eps1, attempt.eps2, attempt.c1, attempt.c3
        ));
    }
    if !within {
        discrepancy.push_str(
            "The certificate at the selected weights differs from the published constants by more than \
             an order of magnitude in at least one entry.",
        );
    }
    Table2bComparison {
        paper: p,
        at_paper_weights: attempt,
        ratios_selected: ratios,
        within_order_of_magnitude: within,
        discrepancy: discrepancy.trim_end().to_string(),
    }
}

#[derive(Debug, Clone, Serialize)]
struct CertificateFile<'a> {
    certificate: &'a Certificate,
    equilibrium: EquilibriumReport,
    table_2b: &'a Table2bComparison,
}

/// Per-run summary in `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub decay: DecayReport,
    pub state_envelope: CheckOutcome,
    pub convergence: Convergence,
    pub passed: bool,
}

impl From<&Verification> for RunSummary {
    fn from(v: &Verification) -> Self {
        Self {
            decay: v.decay.clone(),
            state_envelope: v.state_envelope.clone(),
            convergence: v.convergence,
            passed: v.passed(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseStudyReport {
    pub options: CaseStudyOptions,
    pub schedule: DosSchedule,
    pub nominal: RunSummary,
    pub dos: RunSummary,
    pub dos_stable: bool,
    pub table_2b: Table2bComparison,
    pub passed: bool,
}

/// Runs the four-bus study (nominal and DoS, from the unloaded rest state) and
/// writes `trajectory.csv`, `certificate.json`, `envelope.dat` and
/// `report.json` to `out_dir`.
pub fn run_case_study(out_dir: &Path, opts: CaseStudyOptions) -> Result<CaseStudyReport> {
    let config = NetworkConfig::case_study();
    let (net, ctrl) = build_network(&config)?;
    let eq = solve_equilibrium(&net, &ctrl)?;
    let budget = DosBudget { kappa: opts.kappa, tau: opts.tau };
    let cert = build_certificate(&net, &ctrl, &eq, Some(budget))?;
    let x0 = initial_state(&config, &net)?;

    let schedule = generate_schedule(opts.kappa, opts.tau, opts.t_end, 0, Policy::Greedy)?;
    let nominal_schedule = DosSchedule::empty(opts.kappa, opts.tau)?;
    let nominal =
        verify_with_certificate(&net, &ctrl, &eq, &cert, &x0, &nominal_schedule, opts.dt, opts.t_end)?;
    let dos = verify_with_certificate(&net, &ctrl, &eq, &cert, &x0, &schedule, opts.dt, opts.t_end)?;

    let attempt = paper_weight_attempt(&net, &ctrl, &eq, budget)?;
    let table = compare_table_2b(&cert, attempt);

    std::fs::create_dir_all(out_dir)?;
    dos.trajectory
        .write_csv(BufWriter::new(File::create(out_dir.join("trajectory.csv"))?), opts.csv_stride)?;
    let cert_file = CertificateFile { certificate: &cert, equilibrium: eq.report(&net), table_2b: &table };
    std::fs::write(out_dir.join("certificate.json"), serde_json::to_string_pretty(&cert_file)? + "\n")?;
    write_envelope(&out_dir.join("envelope.dat"), &nominal, &dos, &cert, budget, opts.csv_stride)?;

    let nominal_summary = RunSummary::from(&nominal);
    let dos_summary = RunSummary::from(&dos);
    let report = CaseStudyReport {
        options: opts,
        schedule,
        passed: nominal_summary.passed && dos_summary.passed && dos.convergence.converged,
        nominal: nominal_summary,
        dos: dos_summary,
        dos_stable: cert.dos.is_some_and(|e| e.dos_stable),
        table_2b: table,
    };
    std::fs::write(out_dir.join("report.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    Ok(report)
}

/// Whitespace-separated columns for gnuplot: time, both state norms, both
/// envelopes, and the natural log of each envelope (finite even when the
/// envelope itself overflows).
fn write_envelope(
    path: &Path,
    nominal: &Verification,
    dos: &Verification,
    cert: &Certificate,
    budget: DosBudget,
    stride: usize,
) -> Result<()> {
    let env = cert.dos_envelope(budget);
    let (zn, zd) = (
        nominal.trajectory.z_norm.as_ref().expect("observed"),
        dos.trajectory.z_norm.as_ref().expect("observed"),
    );
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "# t z_nominal z_dos bound_nominal bound_dos ln_bound_nominal ln_bound_dos")?;
    let t = &dos.trajectory.t;
    let stride = stride.max(1);
    let last = t.len() - 1;
    for k in (0..t.len()).filter(|&k| k % stride == 0 || k == last) {
        let ln_nom = cert.alpha_nom.ln() - cert.beta_nom * t[k] + zn[0].ln();
        let ln_dos = env.ln_alpha_dos - env.beta_dos * t[k] + zd[0].ln();
        writeln!(
            out,
            "{:.6} {:.11e} {:.11e} {:.11e} {:.11e} {:.11e} {:.11e}",
            t[k],
            zn[k],
            zd[k],
            ln_nom.exp(),
            ln_dos.exp(),
            ln_nom,
            ln_dos
        )?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn case() -> (PowerNetwork, ControllerSetup, Equilibrium, Certificate) {
        let (net, ctrl) = build_network(&NetworkConfig::case_study()).unwrap();
        let eq = solve_equilibrium(&net, &ctrl).unwrap();
        let cert = build_certificate(&net, &ctrl, &eq, Some(DosBudget { kappa: 10.0, tau: 1.5 })).unwrap();
        (net, ctrl, eq, cert)
    }

    #[test]
    fn equilibrium_start_passes_trivially() {
        let (net, ctrl, eq, cert) = case();
        let x0 = SystemState::new(eq.delta_bar.clone(), DVector::zeros(2), eq.u_star.clone(), 0.0);
        let sched = generate_schedule(10.0, 1.5, 5.0, 0, Policy::Greedy).unwrap();
        let v = verify_with_certificate(&net, &ctrl, &eq, &cert, &x0, &sched, 1e-2, 5.0).unwrap();
        assert!(v.decay.passed(), "{:?}", v.decay);
        assert!(v.trajectory.w.as_ref().unwrap().iter().all(|w| w.abs() < 1e-20));
    }

    #[test]
    fn deflated_alpha_fails_at_start() {
        let (net, ctrl, eq, cert) = case();
        let x0 = SystemState::rest(&net);
        let v =
            verify_with_certificate(&net, &ctrl, &eq, &cert, &x0, &DosSchedule::none(), 1e-2, 2.0).unwrap();
        let bad = check_state_envelope(&v.trajectory, 0.5f64.ln(), cert.beta_nom);
        assert_eq!(bad.status, Status::Fail);
        assert_eq!(bad.first_violation.unwrap().index, 0);
        assert!(v.state_envelope.passed());
    }

    #[test]
    fn leaving_region_is_not_applicable() {
        let (net, ctrl, eq, mut cert) = case();
        let x0 = SystemState::rest(&net);
        let v =
            verify_with_certificate(&net, &ctrl, &eq, &cert, &x0, &DosSchedule::none(), 1e-2, 1.0).unwrap();
        // shrink the region until the rest state lies outside it
        cert.rho = FRAC_PI_2 - 1e-6;
        let r = check_decay(&net, &v.trajectory, &cert, &DosSchedule::none());
        assert_eq!(r.nominal.status, Status::NotApplicable);
    }
}
