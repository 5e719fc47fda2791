//! The four commands and their reports.

use serde::Serialize;

use crate::algsim::{
    make_plan, plan_program, simulate, verify_against_reference, CircuitSummary, ErrorReport, Mode, PlanOptions,
    SimulationPlan, VerifyReport,
};
use crate::divisibility::{estimate_tid, profile, DivisibilityProfile, TidEstimate, CHANNEL_TOL};
use crate::error::{Error, Result};
use crate::liouvillian::{beta, beta_tilde, validate_model, BetaReport, ValidationReport};
use crate::propagator::{slice_grid, DEFAULT_TOL};
use crate::tensor::NormEffort;
use crate::trotter::{sweep, CorollaryMode, SweepRow};

use super::config::{MatrixLiteral, Parsed};
use super::report::{key_value_csv, ledger_csv, matrix_literal, sweep_csv, to_json, Conventions};
use super::{Args, Command, ModeArg, EXIT_INFEASIBLE, EXIT_OK, EXIT_VERIFY_FAILED};

/// Rendered report of one command.
#[derive(Clone, Debug)]
pub struct Output {
    pub json: String,
    pub csv: String,
    pub summary: String,
    pub code: i32,
    /// False when nothing should be written, e.g. a simulation refused by its plan.
    pub emit: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct ModelSummary {
    pub sites: usize,
    pub local_dim: usize,
    pub dim: usize,
    pub k: usize,
    pub terms: usize,
    pub supports: Vec<Vec<usize>>,
    pub t: f64,
    pub horizon: f64,
}

fn model_summary(p: &Parsed) -> ModelSummary {
    let l = p.model.lattice();
    ModelSummary {
        sites: l.sites,
        local_dim: l.local_dim,
        dim: l.dim(),
        k: p.model.k(),
        terms: p.model.term_count(),
        supports: p.model.terms().iter().map(|t| t.support().to_vec()).collect(),
        t: p.t,
        horizon: p.model.horizon(),
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct AnalyzeReport {
    pub report: &'static str,
    pub conventions: Conventions,
    pub model: ModelSummary,
    pub validation: ValidationReport,
    pub beta: BetaReport,
    /// Absent when some term is given as a raw generator.
    pub beta_tilde: Option<f64>,
    pub profiles: Vec<DivisibilityProfile>,
    pub tid: TidEstimate,
    pub sweep: Vec<SweepRow>,
}

#[derive(Clone, Debug, Serialize)]
pub struct PlanReport {
    pub report: &'static str,
    pub conventions: Conventions,
    pub model: ModelSummary,
    pub plan: SimulationPlan,
}

#[derive(Clone, Debug, Serialize)]
pub struct SimulateReport {
    pub report: &'static str,
    pub conventions: Conventions,
    pub model: ModelSummary,
    pub mode: Mode,
    pub seed: u64,
    pub plan: SimulationPlan,
    pub n_total: usize,
    pub circuit_count: u64,
    pub total_trials: u64,
    pub expectation: f64,
    pub exact_expectation: f64,
    pub errors: ErrorReport,
    pub state: MatrixLiteral,
    pub circuits: Vec<CircuitSummary>,
}

#[derive(Clone, Debug, Serialize)]
pub struct VerifyOutput {
    pub report: &'static str,
    pub conventions: Conventions,
    pub model: ModelSummary,
    pub plan: SimulationPlan,
    pub verify: VerifyReport,
    pub state: MatrixLiteral,
}

fn plan_options(args: &Args, p: &Parsed) -> PlanOptions {
    let a = &p.config.analysis;
    PlanOptions {
        trotter_share: a.trotter_share,
        corollary_mode: CorollaryMode::Validated,
        beta_mode: a.beta_mode,
        beta_grid: a.beta_grid,
        m_sequence: a.m_sequence.clone(),
        tid_tolerance: a.tid_tolerance,
        gauge_samples: a.gauge_samples,
        seed: args.seed,
        m_override: args.m,
        integrator_tol: DEFAULT_TOL,
    }
}

fn build_plan(args: &Args, p: &Parsed) -> Result<SimulationPlan> {
    let mut caps = p.config.caps;
    if let Some(c) = args.max_circuits {
        caps.max_circuits = c;
    }
    make_plan(&p.model, p.t, args.epsilon, args.z, &caps, &plan_options(args, p))
}

fn mode(args: &Args) -> Mode {
    match args.mode {
        ModeArg::Exact => Mode::Exact,
        ModeArg::Sampled => Mode::Sampled,
    }
}

fn plan_rows(plan: &SimulationPlan) -> Vec<(&'static str, String)> {
    let f = |v: f64| if v.is_finite() { format!("{v:.16e}") } else { String::new() };
    vec![
        ("epsilon", f(plan.epsilon)),
        ("epsilon_t", f(plan.epsilon_t)),
        ("epsilon_a", f(plan.epsilon_a)),
        ("z", f(plan.z)),
        ("beta", f(plan.beta)),
        ("t_id", f(plan.t_id)),
        ("c_tilde", plan.c_tilde.to_string()),
        ("m_corollary", plan.corollary.m.to_string()),
        ("m", plan.m.to_string()),
        ("m_clipped", plan.m_clipped.to_string()),
        ("trotter_bound", f(plan.trotter_bound)),
        ("trotter_target_met", plan.trotter_target_met.to_string()),
        ("n_total", plan.n_total.to_string()),
        ("circuit_count", plan.circuit_count.to_string()),
        ("gauge_bound", f(plan.gauge_bound)),
        ("estimator_tolerance", plan.estimator_tolerance.map_or(String::new(), f)),
        ("trials_per_estimator", plan.trials_per_estimator.to_string()),
        ("expected_shots", f(plan.expected_shots)),
        ("min_success_probability", f(plan.min_success_probability)),
        ("feasible", plan.feasible.to_string()),
        ("limiting_factor", plan.limiting_factor.clone().unwrap_or_default().replace(',', ";")),
    ]
}

fn plan_summary(plan: &SimulationPlan) -> String {
    format!(
        "plan: m = {} (formula {}), {} non-CP slots, {} circuits, N_T = {}, feasible = {}{}",
        plan.m,
        plan.corollary.m,
        plan.n_total,
        plan.circuit_count,
        plan.trials_per_estimator,
        plan.feasible,
        plan.limiting_factor.as_ref().map_or(String::new(), |l| format!(" ({l})"))
    )
}

pub fn run_command(args: &Args, p: &Parsed) -> Result<Output> {
    let conventions = Conventions::new(p.config.analysis.beta_mode, CorollaryMode::Validated);
    match args.command {
        Command::Analyze => analyze(args, p, conventions),
        Command::Plan => {
            let plan = build_plan(args, p)?;
            let code = if plan.feasible { EXIT_OK } else { EXIT_INFEASIBLE };
            let summary = plan_summary(&plan);
            let csv = key_value_csv(&plan_rows(&plan));
            let report = PlanReport { report: "plan", conventions, model: model_summary(p), plan };
            Ok(Output { json: to_json(&report), csv, summary, code, emit: true })
        }
        Command::Simulate => {
            let plan = build_plan(args, p)?;
            if !plan.feasible {
                return Ok(refused(&plan));
            }
            let program = plan_program(&p.model, &plan)?;
            let sampling = plan.sampling();
            let out =
                simulate(&program, &p.initial_state, &p.observable, mode(args), sampling.as_ref(), args.seed, &plan.caps)?;
            let rec = out.reconstruction;
            let summary = format!(
                "simulate ({:?}): <A> = {:.12}, exact weights give {:.12}, {} circuits, {} shots",
                out.mode,
                rec.expectation,
                rec.exact_expectation,
                out.circuits.len(),
                out.total_trials
            );
            let csv = ledger_csv(&out.circuits);
            let report = SimulateReport {
                report: "simulate",
                conventions,
                model: model_summary(p),
                mode: out.mode,
                seed: out.seed,
                n_total: program.n_total(),
                circuit_count: program.circuit_count(),
                plan,
                total_trials: out.total_trials,
                expectation: rec.expectation,
                exact_expectation: rec.exact_expectation,
                errors: rec.errors,
                state: matrix_literal(&rec.state),
                circuits: out.circuits,
            };
            Ok(Output { json: to_json(&report), csv, summary, code: EXIT_OK, emit: true })
        }
        Command::Verify => {
            let plan = build_plan(args, p)?;
            if !plan.feasible {
                return Ok(refused(&plan));
            }
            let (verify, out) =
                verify_against_reference(&p.model, &p.initial_state, &p.observable, &plan, mode(args), args.seed)?;
            let code = if verify.passed { EXIT_OK } else { EXIT_VERIFY_FAILED };
            let summary = format!(
                "verify ({:?}): deviation {:.3e} vs threshold {:.3e}: {}",
                verify.mode,
                verify.deviation,
                verify.threshold,
                if verify.passed { "pass" } else { "FAIL" }
            );
            let f = |v: f64| format!("{v:.16e}");
            let csv = key_value_csv(&[
                ("mode", format!("{:?}", verify.mode).to_lowercase()),
                ("seed", verify.seed.to_string()),
                ("deviation", f(verify.deviation)),
                ("threshold", f(verify.threshold)),
                ("passed", verify.passed.to_string()),
                ("expectation", f(verify.expectation)),
                ("reference_expectation", f(verify.reference_expectation)),
                ("total_trials", verify.total_trials.to_string()),
            ]);
            let report = VerifyOutput {
                report: "verify",
                conventions,
                model: model_summary(p),
                plan,
                state: matrix_literal(&out.reconstruction.state),
                verify,
            };
            Ok(Output { json: to_json(&report), csv, summary, code, emit: true })
        }
    }
}

fn refused(plan: &SimulationPlan) -> Output {
    Output {
        json: String::new(),
        csv: String::new(),
        summary: format!("refusing to run an infeasible plan; {}", plan_summary(plan)),
        code: EXIT_INFEASIBLE,
        emit: false,
    }
}

fn analyze(args: &Args, p: &Parsed, conventions: Conventions) -> Result<Output> {
    let a = &p.config.analysis;
    let effort = NormEffort::default();
    let validation = validate_model(&p.model, p.t, a.beta_grid.max(2));
    let b = beta(&p.model, p.t, a.beta_mode, a.beta_grid, &effort)?;
    let bt = match beta_tilde(&p.model, p.t, a.beta_grid) {
        Ok(v) => Some(v),
        Err(Error::NotGksl(_)) => None,
        Err(e) => return Err(e),
    };
    let tid = estimate_tid(&p.model, p.t, &a.m_sequence, a.tid_tolerance)?;
    let mut ms = a.m_sequence.clone();
    ms.extend(args.m);
    ms.sort_unstable();
    ms.dedup();
    let profiles = ms
        .iter()
        .map(|&m| Ok(profile(&slice_grid(&p.model, p.t, m, false, DEFAULT_TOL)?, CHANNEL_TOL)))
        .collect::<Result<Vec<_>>>()?;
    let mut sweep_ms = a.sweep_ms.clone();
    sweep_ms.extend(args.m);
    sweep_ms.sort_unstable();
    sweep_ms.dedup();
    let rows = sweep(&p.model, p.t, &sweep_ms, b.value, tid.t_id.min(p.t), tid.c_tilde, DEFAULT_TOL, &effort)?;
    let summary = format!(
        "analyze: beta = {:.6}, t_ID = {:.6} (converged {}), C~ = {}, N~_TOT at m = {}: {}",
        b.value,
        tid.t_id,
        tid.converged,
        tid.c_tilde,
        profiles.last().map_or(0, |q| q.m),
        profiles.last().map_or(0, |q| q.n_total)
    );
    let csv = sweep_csv(&rows);
    let report = AnalyzeReport {
        report: "analyze",
        conventions,
        model: model_summary(p),
        validation,
        beta: b,
        beta_tilde: bt,
        profiles,
        tid,
        sweep: rows,
    };
    Ok(Output { json: to_json(&report), csv, summary, code: EXIT_OK, emit: true })
}
