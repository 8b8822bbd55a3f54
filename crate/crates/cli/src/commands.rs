//! Implementations of the four subcommands.

use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use nalgebra::DMatrix;
use serde::Serialize;

use cqlqg_core::cost::{cost_discounted, grad_discounted};
use cqlqg_core::geometry::check_strong_local_min;
use cqlqg_core::homotopy::{continuation_run, finalize, ContinuationConfig, Verdict};
use cqlqg_core::lyapunov::{is_t_stabilizing, max_admissible_t};
use cqlqg_core::model::{
    assemble_closed_loop, closed_loop_energy, random_problem, validate_feedthrough, ProblemDims,
    SynthesisProblem,
};
use cqlqg_core::param::GradientTriple;
use cqlqg_core::structure::quantum_psd_check;
use cqlqg_core::ControllerTriple;

use crate::files::{
    format_float, read_json, trace_table, verdict_name, write_atomic, write_json, ControllerFile,
    ProblemFile, TraceFile,
};

/// Exit codes shared by all subcommands.
pub mod exit_code {
    pub const OK: i32 = 0;
    pub const CHECK_FAILED: i32 = 1;
    pub const BAD_INPUT: i32 = 2;
    pub const MARGINAL: i32 = 3;
    pub const NOT_STABILIZING: i32 = 4;
}

pub struct GenArgs {
    pub out: PathBuf,
    pub dims: ProblemDims,
    pub seed: u64,
    pub scale: f64,
    pub sigma_coupling: f64,
}

/// Block-correlated covariance `[[ (1+c) I, c I ], [ c I, (1+c) I ]]`; it
/// dominates the identity, so the quantum positivity check holds for c >= 0.
pub fn coupled_covariance(n: usize, c: f64) -> DMatrix<f64> {
    let mut sigma = DMatrix::identity(2 * n, 2 * n) * (1.0 + c);
    for k in 0..n {
        sigma[(k, k + n)] = c;
        sigma[(k + n, k)] = c;
    }
    sigma
}

pub fn cmd_gen(args: &GenArgs) -> Result<i32> {
    let (phys, _pi, f, g, mut sigma) =
        random_problem(args.dims, args.seed, args.scale).map_err(|e| anyhow!("{e}"))?;
    if args.sigma_coupling != 0.0 {
        if !(args.sigma_coupling > 0.0 && args.sigma_coupling <= 1.0) {
            bail!("sigma coupling must lie in (0, 1]");
        }
        sigma = coupled_covariance(args.dims.n, args.sigma_coupling);
    }
    let s = cqlqg_core::ItoCcrStructure::canonical(
        args.dims.n,
        args.dims.m1,
        args.dims.m2,
        args.dims.p1,
        args.dims.p2,
    )
    .map_err(|e| anyhow!("{e}"))?;
    let d_ctrl = cqlqg_core::canonical_feedthrough(args.dims.p2, args.dims.m2)
        .map_err(|e| anyhow!("{e}"))?;
    let problem =
        SynthesisProblem::new(s, phys, d_ctrl, f, g, sigma).map_err(|e| anyhow!("{e}"))?;
    let file = ProblemFile::from_parts(&problem, Some(args.seed));
    write_json(&args.out, &file)?;
    log::info!("wrote problem file {}", args.out.display());
    Ok(exit_code::OK)
}

pub struct SynthArgs {
    pub input: PathBuf,
    pub out_dir: PathBuf,
    pub t0: Option<f64>,
    pub t_max: f64,
    pub h0: f64,
    pub tol_corrector: f64,
    pub max_steps: usize,
}

#[derive(Debug, Serialize)]
struct SynthSummary {
    verdict: String,
    run_verdict: String,
    abscissa: Option<f64>,
    nodes: usize,
    t_end: Option<f64>,
    v_infinite: Option<f64>,
    grad_infinite_norm: Option<f64>,
    error: Option<String>,
}

pub fn cmd_synth(args: &SynthArgs) -> Result<i32> {
    let file: ProblemFile = read_json(&args.input)?;
    let problem = file.to_problem().context("invalid problem file")?;
    let config = ContinuationConfig {
        t0: args.t0,
        t_max: args.t_max,
        h0: args.h0,
        tol_corrector: args.tol_corrector,
        max_steps: args.max_steps,
        ..Default::default()
    };
    match continuation_run(&problem, config) {
        Ok(trace) => {
            let report = finalize(&problem, &trace).map_err(|e| anyhow!("{e}"))?;
            let trace_file = TraceFile::from_trace(&trace);
            write_json(&args.out_dir.join("trace.json"), &trace_file)?;
            write_atomic(&args.out_dir.join("trace.txt"), &trace_table(&trace_file))?;
            write_json(
                &args.out_dir.join("controller.json"),
                &ControllerFile::from_triple(&report.controller),
            )?;
            let summary = SynthSummary {
                verdict: verdict_name(report.verdict).to_string(),
                run_verdict: verdict_name(trace.verdict).to_string(),
                abscissa: Some(report.abscissa),
                nodes: trace.states.len(),
                t_end: trace.states.last().map(|s| s.t),
                v_infinite: report.v_infinite,
                grad_infinite_norm: report.grad_infinite_norm,
                error: None,
            };
            write_json(&args.out_dir.join("summary.json"), &summary)?;
            log::info!(
                "synthesis finished: verdict {}, {} nodes",
                summary.verdict,
                summary.nodes
            );
            Ok(match report.verdict {
                Verdict::Stabilizing => exit_code::OK,
                Verdict::Marginal => exit_code::MARGINAL,
                _ => exit_code::NOT_STABILIZING,
            })
        }
        Err(err) => {
            // diagnostic verdict, never a crash: record the failure, keep the
            // artifact set consistent (an empty trace), and exit 4
            let empty = TraceFile {
                verdict: "step_failure".into(),
                config: crate::files::TraceConfigEcho {
                    t0: args.t0,
                    t_max: args.t_max,
                    h0: args.h0,
                    h_min: 1e-8,
                    h_max: 1.0,
                    tol_corrector: args.tol_corrector,
                    max_steps: args.max_steps,
                    max_corrector_iters: 30,
                },
                nodes: Vec::new(),
            };
            write_json(&args.out_dir.join("trace.json"), &empty)?;
            write_atomic(&args.out_dir.join("trace.txt"), &trace_table(&empty))?;
            let summary = SynthSummary {
                verdict: "step_failure".into(),
                run_verdict: "step_failure".into(),
                abscissa: None,
                nodes: 0,
                t_end: None,
                v_infinite: None,
                grad_infinite_norm: None,
                error: Some(err.to_string()),
            };
            write_json(&args.out_dir.join("summary.json"), &summary)?;
            log::warn!("synthesis failed: {err}");
            Ok(exit_code::NOT_STABILIZING)
        }
    }
}

pub struct VerifyArgs {
    pub input: PathBuf,
    pub controller: Option<PathBuf>,
    pub t: Option<f64>,
    pub out: Option<PathBuf>,
    pub format: crate::OutputFormat,
}

#[derive(Debug, Serialize)]
struct CheckEntry {
    name: String,
    pass: bool,
    value: f64,
    threshold: f64,
}

#[derive(Debug, Serialize)]
struct OptimalityDiagnostics {
    stationary: bool,
    psd: bool,
    normal_pd: bool,
    kernel_match: bool,
    grad_norm: f64,
    min_eig_normal: f64,
}

#[derive(Debug, Serialize)]
struct VerifyReport {
    all_pass: bool,
    checks: Vec<CheckEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    optimality: Option<OptimalityDiagnostics>,
}

fn push(checks: &mut Vec<CheckEntry>, name: &str, pass: bool, value: f64, threshold: f64) {
    checks.push(CheckEntry {
        name: name.into(),
        pass,
        value,
        threshold,
    });
}

fn fd_gradient_error(p: &SynthesisProblem, pi: &ControllerTriple, t: f64) -> Result<f64> {
    let g = grad_discounted(p, pi, t).map_err(|e| anyhow!("{e}"))?;
    let coords = g.to_coords();
    let scale = 1.0 + pi.energy.norm() + pi.noise_gain.norm() + pi.feedback_gain.norm();
    let h = 1e-6 * scale;
    let mut worst = 0.0f64;
    for (k, dir) in GradientTriple::canonical_basis(pi.dims())
        .iter()
        .enumerate()
    {
        let vp = cost_discounted(
            &assemble_closed_loop(p, &pi.offset(dir, h)).map_err(|e| anyhow!("{e}"))?,
            t,
        )
        .map_err(|e| anyhow!("{e}"))?
        .value;
        let vm = cost_discounted(
            &assemble_closed_loop(p, &pi.offset(dir, -h)).map_err(|e| anyhow!("{e}"))?,
            t,
        )
        .map_err(|e| anyhow!("{e}"))?
        .value;
        let fd = (vp - vm) / (2.0 * h);
        worst = worst.max((fd - coords[k]).abs() / (1.0 + coords[k].abs()));
    }
    Ok(worst)
}

pub fn cmd_verify(args: &VerifyArgs) -> Result<i32> {
    let file: ProblemFile = read_json(&args.input)?;
    let mut checks = Vec::new();
    let mut optimality = None;

    // structural checks run before the validated constructor so a single
    // violation is reported by name instead of aborting the whole report
    let problem = file.to_problem();
    match &problem {
        Ok(p) => {
            push(&mut checks, "plant_feedthrough_pairs", true, 0.0, 0.0);
            push(&mut checks, "ctrl_feedthrough_pairs", true, 0.0, 0.0);
            let sig_ok = quantum_psd_check(&p.sigma, &p.s.theta, 1e-9 * (1.0 + p.sigma.norm()))
                .unwrap_or(false);
            push(&mut checks, "sigma_quantum_psd", sig_ok, 0.0, 1e-9);
            let pl = &p.plant;
            let pr_plant = (&pl.a * &p.s.theta1
                + &p.s.theta1 * pl.a.transpose()
                + &pl.b * &p.s.j1 * pl.b.transpose()
                + &pl.e * &p.j2_tilde * pl.e.transpose())
            .norm();
            let pr_plant_tol = 1e-9 * (1.0 + pl.a.norm());
            push(
                &mut checks,
                "plant_pr_identity",
                pr_plant <= pr_plant_tol,
                pr_plant,
                pr_plant_tol,
            );
        }
        Err(e) => {
            log::warn!("problem validation failed: {e}");
            let d_ok = file
                .d_plant
                .as_ref()
                .map(|rows| {
                    crate::files::rows_to_matrix("D", rows, file.p1, file.m1)
                        .map(|m| validate_feedthrough(&m).is_ok())
                        .unwrap_or(false)
                })
                .unwrap_or(true);
            push(&mut checks, "plant_feedthrough_pairs", d_ok, 0.0, 0.0);
            push(&mut checks, "problem_valid", false, 0.0, 0.0);
        }
    }

    if let (Ok(p), Some(ctrl_path)) = (&problem, &args.controller) {
        let cfile: ControllerFile = read_json(ctrl_path)?;
        match cfile.to_triple(p) {
            Ok(pi)
                if validate_feedthrough(&pi.feedthrough).is_err()
                    || pi.feedthrough != p.ctrl_feedthrough =>
            {
                push(&mut checks, "ctrl_file_feedthrough", false, 0.0, 0.0);
            }
            Ok(pi) => {
                push(&mut checks, "ctrl_file_feedthrough", true, 0.0, 0.0);
                let cl = assemble_closed_loop(p, &pi).map_err(|e| anyhow!("{e}"))?;
                let pr = cl.pr_residual();
                let pr_tol = 1e-9 * (1.0 + (&cl.b * &p.s.j * cl.b.transpose()).norm());
                push(
                    &mut checks,
                    "closed_loop_pr_identity",
                    pr <= pr_tol,
                    pr,
                    pr_tol,
                );

                let (r_e, m_e) = closed_loop_energy(p, &pi).map_err(|e| anyhow!("{e}"))?;
                let a_energy = &p.s.theta * (&r_e + m_e.transpose() * &p.s.j * &m_e) * 2.0;
                let energy_gap = (&a_energy - &cl.a).norm();
                let energy_tol = 1e-9 * (1.0 + cl.a.norm());
                push(
                    &mut checks,
                    "energy_parameterization",
                    energy_gap <= energy_tol,
                    energy_gap,
                    energy_tol,
                );

                if let Some(t) = args.t {
                    let admissible = is_t_stabilizing(&cl.a, t);
                    push(
                        &mut checks,
                        "horizon_admissible",
                        admissible,
                        t,
                        max_admissible_t(&cl.a),
                    );
                    if admissible {
                        let rep = cost_discounted(&cl, t).map_err(|e| anyhow!("{e}"))?;
                        let spread_tol = 1e-8 * (1.0 + rep.value);
                        push(
                            &mut checks,
                            "cost_representation_spread",
                            rep.representation_spread <= spread_tol,
                            rep.representation_spread,
                            spread_tol,
                        );
                        let g = cl.gramians_discounted(t).map_err(|e| anyhow!("{e}"))?;
                        let pt_ok = quantum_psd_check(&g.p, &p.s.theta, 1e-9 * (1.0 + g.p.norm()))
                            .unwrap_or(false);
                        push(&mut checks, "covariance_quantum_psd", pt_ok, 0.0, 1e-9);
                        let fd_err = fd_gradient_error(p, &pi, t)?;
                        push(
                            &mut checks,
                            "gradient_finite_difference",
                            fd_err <= 1e-5,
                            fd_err,
                            1e-5,
                        );
                        let slm = check_strong_local_min(p, &pi, t, 1e-7, 1e-10)
                            .map_err(|e| anyhow!("{e}"))?;
                        optimality = Some(OptimalityDiagnostics {
                            stationary: slm.stationary,
                            psd: slm.psd,
                            normal_pd: slm.normal_pd,
                            kernel_match: slm.kernel_match,
                            grad_norm: slm.grad_norm,
                            min_eig_normal: slm.min_eig_normal,
                        });
                    }
                }
            }
            Err(e) => {
                log::warn!("controller validation failed: {e}");
                push(&mut checks, "controller_valid", false, 0.0, 0.0);
            }
        }
    }

    let all_pass = checks.iter().all(|c| c.pass);
    let report = VerifyReport {
        all_pass,
        checks,
        optimality,
    };
    let body = match args.format {
        crate::OutputFormat::Json => {
            let mut s = serde_json::to_string_pretty(&report)?;
            s.push('\n');
            s
        }
        crate::OutputFormat::Csv => {
            let mut s = String::from("name,pass,value,threshold\n");
            for c in &report.checks {
                s.push_str(&format!(
                    "{},{},{},{}\n",
                    c.name,
                    c.pass,
                    format_float(c.value),
                    format_float(c.threshold)
                ));
            }
            s
        }
    };
    match &args.out {
        Some(path) => write_atomic(path, &body)?,
        None => print!("{body}"),
    }
    Ok(if all_pass {
        exit_code::OK
    } else {
        exit_code::CHECK_FAILED
    })
}

pub struct ExportArgs {
    pub input: PathBuf,
    pub out: PathBuf,
    pub columns: String,
    pub format: crate::OutputFormat,
}

fn column_value(node: &crate::files::TraceNode, name: &str) -> Option<f64> {
    match name {
        "T" => Some(node.t),
        "cost" => Some(node.cost),
        "grad_norm" => Some(node.grad_norm),
        "abscissa" => Some(node.abscissa),
        "min_eig_normal" => Some(node.min_eig_normal),
        _ => None,
    }
}

pub fn cmd_export(args: &ExportArgs) -> Result<i32> {
    let trace: TraceFile = read_json(&args.input)?;
    let columns: Vec<&str> = args
        .columns
        .split(',')
        .map(str::trim)
        .filter(|c| !c.is_empty())
        .collect();
    if columns.is_empty() {
        bail!("no columns selected");
    }
    if let Some(first) = trace.nodes.first() {
        for c in &columns {
            if column_value(first, c).is_none() {
                bail!("unknown column {c:?} (available: T, cost, grad_norm, abscissa, min_eig_normal)");
            }
        }
    } else {
        let known = ["T", "cost", "grad_norm", "abscissa", "min_eig_normal"];
        for c in &columns {
            if !known.contains(c) {
                bail!("unknown column {c:?} (available: T, cost, grad_norm, abscissa, min_eig_normal)");
            }
        }
    }
    let body = match args.format {
        crate::OutputFormat::Csv => {
            let mut s = columns.join(",");
            s.push('\n');
            for node in &trace.nodes {
                let row: Vec<String> = columns
                    .iter()
                    .map(|c| format_float(column_value(node, c).expect("validated column")))
                    .collect();
                s.push_str(&row.join(","));
                s.push('\n');
            }
            s
        }
        crate::OutputFormat::Json => {
            let rows: Vec<serde_json::Value> = trace
                .nodes
                .iter()
                .map(|node| {
                    let mut obj = serde_json::Map::new();
                    for c in &columns {
                        obj.insert(
                            (*c).to_string(),
                            serde_json::json!(column_value(node, c).expect("validated column")),
                        );
                    }
                    serde_json::Value::Object(obj)
                })
                .collect();
            let mut s = serde_json::to_string_pretty(&rows)?;
            s.push('\n');
            s
        }
    };
    write_atomic(&args.out, &body)?;
    Ok(exit_code::OK)
}
