//! File schemas and IO helpers: problem, controller, trace and report files
//! are JSON trees with matrices as row-major nested arrays. All writes go
//! through a write-temp-then-rename path so partial files never appear.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use cqlqg_core::homotopy::{HomotopyState, HomotopyTrace, Verdict};
use cqlqg_core::{canonical_feedthrough, ControllerTriple, ItoCcrStructure, SynthesisProblem};

pub type Rows = Vec<Vec<f64>>;

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Rows {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

pub fn rows_to_matrix(name: &str, rows: &Rows, nrows: usize, ncols: usize) -> Result<DMatrix<f64>> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        bail!("field {name} must be a {nrows}x{ncols} row-major matrix");
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

/// Problem specification file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProblemFile {
    pub n: usize,
    pub m1: usize,
    pub m2: usize,
    pub p1: usize,
    pub p2: usize,
    pub r: usize,
    #[serde(rename = "R1")]
    pub r1: Rows,
    #[serde(rename = "M1")]
    pub m1_coupling: Rows,
    #[serde(rename = "L1")]
    pub l1_coupling: Rows,
    #[serde(rename = "F")]
    pub f: Rows,
    #[serde(rename = "G")]
    pub g: Rows,
    #[serde(rename = "Sigma", skip_serializing_if = "Option::is_none")]
    pub sigma: Option<Rows>,
    #[serde(rename = "D", skip_serializing_if = "Option::is_none")]
    pub d_plant: Option<Rows>,
    #[serde(rename = "d", skip_serializing_if = "Option::is_none")]
    pub d_ctrl: Option<Rows>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl ProblemFile {
    pub fn from_parts(p: &SynthesisProblem, seed: Option<u64>) -> Self {
        Self {
            n: p.s.n,
            m1: p.s.m1,
            m2: p.s.m2,
            p1: p.s.p1,
            p2: p.s.p2,
            r: p.r(),
            r1: matrix_to_rows(&p.plant_phys.energy),
            m1_coupling: matrix_to_rows(&p.plant_phys.field_coupling),
            l1_coupling: matrix_to_rows(&p.plant_phys.feedback_coupling),
            f: matrix_to_rows(&p.weight_state),
            g: matrix_to_rows(&p.weight_output),
            sigma: Some(matrix_to_rows(&p.sigma)),
            d_plant: Some(matrix_to_rows(&p.plant_phys.feedthrough)),
            d_ctrl: Some(matrix_to_rows(&p.ctrl_feedthrough)),
            seed,
        }
    }

    /// Validated problem from the parsed tree; optional fields fall back to
    /// the canonical feedthrough selections and the identity covariance.
    pub fn to_problem(&self) -> Result<SynthesisProblem> {
        let s = ItoCcrStructure::canonical(self.n, self.m1, self.m2, self.p1, self.p2)
            .context("invalid dimensions")?;
        let d_plant = match &self.d_plant {
            Some(rows) => rows_to_matrix("D", rows, self.p1, self.m1)?,
            None => canonical_feedthrough(self.p1, self.m1)?,
        };
        let d_ctrl = match &self.d_ctrl {
            Some(rows) => rows_to_matrix("d", rows, self.p2, self.m2)?,
            None => canonical_feedthrough(self.p2, self.m2)?,
        };
        let sigma = match &self.sigma {
            Some(rows) => rows_to_matrix("Sigma", rows, 2 * self.n, 2 * self.n)?,
            None => DMatrix::identity(2 * self.n, 2 * self.n),
        };
        let phys = cqlqg_core::PlantPhysical {
            energy: rows_to_matrix("R1", &self.r1, self.n, self.n)?,
            field_coupling: rows_to_matrix("M1", &self.m1_coupling, self.m1, self.n)?,
            feedback_coupling: rows_to_matrix("L1", &self.l1_coupling, self.p2, self.n)?,
            feedthrough: d_plant,
        };
        let f = rows_to_matrix("F", &self.f, self.r, self.n)?;
        let g = rows_to_matrix("G", &self.g, self.r, self.p2)?;
        SynthesisProblem::new(s, phys, d_ctrl, f, g, sigma).map_err(Into::into)
    }
}

/// Controller triple file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ControllerFile {
    #[serde(rename = "R2")]
    pub r2: Rows,
    pub b: Rows,
    pub e: Rows,
    #[serde(rename = "d", skip_serializing_if = "Option::is_none")]
    pub d_ctrl: Option<Rows>,
}

impl ControllerFile {
    pub fn from_triple(pi: &ControllerTriple) -> Self {
        Self {
            r2: matrix_to_rows(&pi.energy),
            b: matrix_to_rows(&pi.noise_gain),
            e: matrix_to_rows(&pi.feedback_gain),
            d_ctrl: Some(matrix_to_rows(&pi.feedthrough)),
        }
    }

    pub fn to_triple(&self, p: &SynthesisProblem) -> Result<ControllerTriple> {
        let n = p.s.n;
        let d = match &self.d_ctrl {
            Some(rows) => rows_to_matrix("d", rows, p.s.p2, p.s.m2)?,
            None => p.ctrl_feedthrough.clone(),
        };
        ControllerTriple::new(
            rows_to_matrix("R2", &self.r2, n, n)?,
            rows_to_matrix("b", &self.b, n, p.s.m2)?,
            rows_to_matrix("e", &self.e, n, p.s.p1)?,
            d,
        )
        .map_err(Into::into)
    }
}

/// One trace record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceNode {
    #[serde(rename = "T")]
    pub t: f64,
    pub cost: f64,
    pub grad_norm: f64,
    pub abscissa: f64,
    pub min_eig_normal: f64,
    #[serde(rename = "Pi")]
    pub pi: ControllerFile,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceConfigEcho {
    pub t0: Option<f64>,
    pub t_max: f64,
    pub h0: f64,
    pub h_min: f64,
    pub h_max: f64,
    pub tol_corrector: f64,
    pub max_steps: usize,
    pub max_corrector_iters: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceFile {
    pub verdict: String,
    pub config: TraceConfigEcho,
    pub nodes: Vec<TraceNode>,
}

impl TraceFile {
    pub fn from_trace(trace: &HomotopyTrace) -> Self {
        let config = TraceConfigEcho {
            t0: trace.config.t0,
            t_max: trace.config.t_max,
            h0: trace.config.h0,
            h_min: trace.config.h_min,
            h_max: trace.config.h_max,
            tol_corrector: trace.config.tol_corrector,
            max_steps: trace.config.max_steps,
            max_corrector_iters: trace.config.max_corrector_iters,
        };
        let nodes = trace
            .states
            .iter()
            .map(|st: &HomotopyState| TraceNode {
                t: st.t,
                cost: st.cost,
                grad_norm: st.grad_norm,
                abscissa: st.abscissa,
                min_eig_normal: st.min_eig_normal,
                pi: ControllerFile::from_triple(&st.pi),
            })
            .collect();
        Self {
            verdict: verdict_name(trace.verdict).to_string(),
            config,
            nodes,
        }
    }
}

pub fn verdict_name(v: Verdict) -> &'static str {
    match v {
        Verdict::Stabilizing => "stabilizing",
        Verdict::Marginal => "marginal",
        Verdict::Diverged => "diverged",
        Verdict::StepFailure => "step_failure",
    }
}

/// Decimal rendering with 17 significant digits; round-trips `f64` exactly.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// Human-readable table of a trace: scalar columns followed by the flattened
/// controller triple (energy, noise gain, feedback gain; row-major).
pub fn trace_table(file: &TraceFile) -> String {
    let mut out = String::new();
    out.push_str("# step  T  cost  grad_norm  abscissa  min_eig_normal  pi...\n");
    for (k, node) in file.nodes.iter().enumerate() {
        let mut cols = vec![
            k.to_string(),
            format_float(node.t),
            format_float(node.cost),
            format_float(node.grad_norm),
            format_float(node.abscissa),
            format_float(node.min_eig_normal),
        ];
        for rows in [&node.pi.r2, &node.pi.b, &node.pi.e] {
            for row in rows.iter() {
                for &v in row {
                    cols.push(format_float(v));
                }
            }
        }
        out.push_str(&cols.join("  "));
        out.push('\n');
    }
    out
}

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)
                .with_context(|| format!("creating directory {}", parent.display()))?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp_path = std::path::PathBuf::from(tmp);
    fs::write(&tmp_path, contents).with_context(|| format!("writing {}", tmp_path.display()))?;
    fs::rename(&tmp_path, path)
        .with_context(|| format!("renaming {} into place", tmp_path.display()))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut body = serde_json::to_string_pretty(value)?;
    body.push('\n');
    write_atomic(path, &body)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let body = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&body).with_context(|| format!("parsing {}", path.display()))
}
