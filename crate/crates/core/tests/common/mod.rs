#![allow(dead_code)] // each integration binary uses a different subset

//! Shared helpers for the integration suites: seeded instance generation,
//! finite-difference oracles (independent of the library's derivative
//! formulas), and small fitting utilities.

use cqlqg_core::cost::{cost_discounted, cost_infinite, grad_discounted};
use cqlqg_core::lyapunov::{max_admissible_t, spectral_abscissa};
use cqlqg_core::model::{assemble_closed_loop, random_synthesis_problem, ProblemDims};
use cqlqg_core::{ControllerTriple, GradientTriple, SynthesisProblem};
use nalgebra::DMatrix;

pub const DESK: ProblemDims = ProblemDims {
    n: 2,
    m1: 4,
    m2: 4,
    p1: 2,
    p2: 2,
    r: 2,
};
pub const DESK_N4: ProblemDims = ProblemDims {
    n: 4,
    m1: 4,
    m2: 4,
    p1: 2,
    p2: 2,
    r: 4,
};

/// Block-correlated covariance dominating the identity.
pub fn coupled_covariance(n: usize, c: f64) -> DMatrix<f64> {
    let mut sigma = DMatrix::identity(2 * n, 2 * n) * (1.0 + c);
    for k in 0..n {
        sigma[(k, k + n)] = c;
        sigma[(k + n, k)] = c;
    }
    sigma
}

/// Seeded instance with an optional covariance coupling.
pub fn instance(
    dims: ProblemDims,
    seed: u64,
    scale: f64,
    coupling: f64,
) -> (SynthesisProblem, ControllerTriple) {
    let (p0, pi) = random_synthesis_problem(dims, seed, scale).expect("instance");
    if coupling == 0.0 {
        return (p0, pi);
    }
    let p = SynthesisProblem::new(
        p0.s.clone(),
        p0.plant_phys.clone(),
        p0.ctrl_feedthrough.clone(),
        p0.weight_state.clone(),
        p0.weight_output.clone(),
        coupled_covariance(dims.n, coupling),
    )
    .expect("coupled instance");
    (p, pi)
}

/// A horizon in the admissible range of the instance: `frac` of the maximum
/// for unstable loops, `fallback` for already-stable ones.
pub fn admissible_horizon(
    p: &SynthesisProblem,
    pi: &ControllerTriple,
    frac: f64,
    fallback: f64,
) -> f64 {
    let cl = assemble_closed_loop(p, pi).expect("closed loop");
    let cap = max_admissible_t(&cl.a);
    if cap.is_finite() {
        frac * cap
    } else {
        fallback
    }
}

/// Scans seeds from `start` for instances whose closed loop is Hurwitz.
pub fn stable_instances(
    dims: ProblemDims,
    start: u64,
    scale: f64,
    count: usize,
) -> Vec<(SynthesisProblem, ControllerTriple)> {
    stable_instances_with_margin(dims, start, scale, count, 1e-3)
}

/// Stable instances whose spectral abscissa lies below `-margin`.
pub fn stable_instances_with_margin(
    dims: ProblemDims,
    start: u64,
    scale: f64,
    count: usize,
    margin: f64,
) -> Vec<(SynthesisProblem, ControllerTriple)> {
    let mut out = Vec::new();
    for seed in start..start + 4000 {
        let (p, pi) = random_synthesis_problem(dims, seed, scale).expect("instance");
        let cl = assemble_closed_loop(&p, &pi).expect("closed loop");
        if spectral_abscissa(&cl.a) < -margin {
            out.push((p, pi));
            if out.len() == count {
                return out;
            }
        }
    }
    panic!(
        "found only {} stable instances in the scan range",
        out.len()
    );
}

/// Central-difference gradient of the discounted cost over the canonical
/// orthonormal coordinates of the parameter space.
pub fn fd_grad_discounted(
    p: &SynthesisProblem,
    pi: &ControllerTriple,
    t: f64,
    h: f64,
) -> GradientTriple {
    let dims = pi.dims();
    let mut coords = nalgebra::DVector::zeros(dims.total());
    for (k, dir) in GradientTriple::canonical_basis(dims).iter().enumerate() {
        let vp = cost_discounted(&assemble_closed_loop(p, &pi.offset(dir, h)).unwrap(), t)
            .unwrap()
            .value;
        let vm = cost_discounted(&assemble_closed_loop(p, &pi.offset(dir, -h)).unwrap(), t)
            .unwrap()
            .value;
        coords[k] = (vp - vm) / (2.0 * h);
    }
    GradientTriple::from_coords(dims, &coords).unwrap()
}

/// Central-difference gradient of the infinite-horizon cost.
pub fn fd_grad_infinite(p: &SynthesisProblem, pi: &ControllerTriple, h: f64) -> GradientTriple {
    let dims = pi.dims();
    let mut coords = nalgebra::DVector::zeros(dims.total());
    for (k, dir) in GradientTriple::canonical_basis(dims).iter().enumerate() {
        let vp = cost_infinite(&assemble_closed_loop(p, &pi.offset(dir, h)).unwrap())
            .unwrap()
            .value;
        let vm = cost_infinite(&assemble_closed_loop(p, &pi.offset(dir, -h)).unwrap())
            .unwrap()
            .value;
        coords[k] = (vp - vm) / (2.0 * h);
    }
    GradientTriple::from_coords(dims, &coords).unwrap()
}

/// Central difference of the discounted gradient in the horizon.
pub fn fd_grad_in_horizon(
    p: &SynthesisProblem,
    pi: &ControllerTriple,
    t: f64,
    h: f64,
) -> GradientTriple {
    let gp = grad_discounted(p, pi, t + h).unwrap();
    let gm = grad_discounted(p, pi, t - h).unwrap();
    gp.add_scaled(&gm, -1.0).scaled(1.0 / (2.0 * h))
}

/// Worst relative coordinate disagreement between two parameter-space
/// elements (coordinate-wise, floored at one).
pub fn worst_rel_coord_gap(a: &GradientTriple, b: &GradientTriple) -> f64 {
    let ca = a.to_coords();
    let cb = b.to_coords();
    ca.iter()
        .zip(cb.iter())
        .map(|(x, y)| (x - y).abs() / (1.0 + x.abs().max(y.abs())))
        .fold(0.0f64, f64::max)
}

/// Least-squares slope of `log10(y)` against `log10(x)`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let lx: Vec<f64> = xs.iter().map(|v| v.log10()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.log10()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let cov: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    cov / var
}

/// Deterministic symmetric matrix for generator construction in tests.
pub fn sym_matrix(n: usize, salt: u64, scale: f64) -> DMatrix<f64> {
    let raw = DMatrix::from_fn(n, n, |i, j| {
        (((i * 13 + j * 7 + salt as usize * 5) % 23) as f64 / 11.0 - 1.0) * scale
    });
    (&raw + raw.transpose()) * 0.5
}
