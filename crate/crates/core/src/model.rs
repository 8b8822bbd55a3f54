//! Plant and controller models: physical-parameter to state-space
//! conversion, closed-loop assembly, the physical-realizability residual,
//! and seeded random problem generation.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{ensure_dim, Error, Result};
use crate::lyapunov;
use crate::param::ControllerTriple;
use crate::structure::{quantum_psd_check, ItoCcrStructure};
use crate::tol;

/// Physical data of the plant: energy matrix, coupling to the external input
/// field, coupling to the controller output field, and the output feedthrough.
#[derive(Debug, Clone)]
pub struct PlantPhysical {
    /// Symmetric energy matrix (`n x n`).
    pub energy: DMatrix<f64>,
    /// Coupling to the external input field (`m1 x n`).
    pub field_coupling: DMatrix<f64>,
    /// Coupling to the controller output field (`p2 x n`).
    pub feedback_coupling: DMatrix<f64>,
    /// Output feedthrough (`p1 x m1`, conjugate pairs of permutation rows).
    pub feedthrough: DMatrix<f64>,
}

/// State-space matrices of the plant.
#[derive(Debug, Clone)]
pub struct Plant {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub e: DMatrix<f64>,
}

/// Checks that a feedthrough matrix consists of conjugate pairs of rows of a
/// permutation matrix: 0/1 entries, one unit entry per row in distinct
/// columns, and rows `2k, 2k+1` selecting a whole column pair `{2j, 2j+1}`.
pub fn validate_feedthrough(d: &DMatrix<f64>) -> Result<()> {
    let (p, m) = (d.nrows(), d.ncols());
    ensure_dim(p >= 2 && p.is_multiple_of(2) && p <= m, || {
        format!("feedthrough must be p x m with even p (2..=m), got {p}x{m}")
    })?;
    let mut cols = vec![usize::MAX; p];
    let mut bad_rows: Vec<usize> = Vec::new();
    for i in 0..p {
        let mut unit_col = None;
        let mut clean = true;
        for j in 0..m {
            let v = d[(i, j)];
            if v == 1.0 {
                if unit_col.is_some() {
                    clean = false;
                } else {
                    unit_col = Some(j);
                }
            } else if v != 0.0 {
                clean = false;
            }
        }
        match (clean, unit_col) {
            (true, Some(j)) => cols[i] = j,
            _ => bad_rows.push(i),
        }
    }
    if bad_rows.is_empty() {
        for i in 0..p {
            for k in (i + 1)..p {
                if cols[i] == cols[k] {
                    bad_rows.push(i);
                    bad_rows.push(k);
                }
            }
        }
    }
    if bad_rows.is_empty() {
        // rows 2k, 2k+1 must select both columns of one conjugate pair
        for k in 0..p / 2 {
            let (c0, c1) = (cols[2 * k], cols[2 * k + 1]);
            if c0 / 2 != c1 / 2 || c0 == c1 {
                bad_rows.push(2 * k);
                bad_rows.push(2 * k + 1);
            }
        }
    }
    if bad_rows.is_empty() {
        Ok(())
    } else {
        bad_rows.sort_unstable();
        bad_rows.dedup();
        Err(Error::Structure(format!(
            "feedthrough violates the conjugate-pair selection contract at rows {bad_rows:?}"
        )))
    }
}

/// Canonical selector `[I_p 0]` picking the first `p/2` conjugate pairs.
pub fn canonical_feedthrough(p: usize, m: usize) -> Result<DMatrix<f64>> {
    ensure_dim(
        p >= 2 && p.is_multiple_of(2) && m >= p && m.is_multiple_of(2),
        || format!("canonical feedthrough needs even p <= m, got {p}x{m}"),
    )?;
    let mut d = DMatrix::zeros(p, m);
    for i in 0..p {
        d[(i, i)] = 1.0;
    }
    Ok(d)
}

/// Plant state-space matrices from physical parameters. `j2_tilde` is the
/// output Ito part `d J2 dᵀ` of the controller feedthrough, which the plant
/// drift depends on through the field-mediated coupling.
pub fn plant_from_physical(
    phys: &PlantPhysical,
    s: &ItoCcrStructure,
    j2_tilde: &DMatrix<f64>,
) -> Result<Plant> {
    let (n, m1, p1, p2) = (s.n, s.m1, s.p1, s.p2);
    let r1 = &phys.energy;
    let m1c = &phys.field_coupling;
    let l1 = &phys.feedback_coupling;
    let d = &phys.feedthrough;
    ensure_dim(r1.nrows() == n && r1.ncols() == n, || {
        format!(
            "plant energy matrix must be {n}x{n}, got {}x{}",
            r1.nrows(),
            r1.ncols()
        )
    })?;
    ensure_dim(m1c.nrows() == m1 && m1c.ncols() == n, || {
        format!(
            "plant field coupling must be {m1}x{n}, got {}x{}",
            m1c.nrows(),
            m1c.ncols()
        )
    })?;
    ensure_dim(l1.nrows() == p2 && l1.ncols() == n, || {
        format!(
            "plant feedback coupling must be {p2}x{n}, got {}x{}",
            l1.nrows(),
            l1.ncols()
        )
    })?;
    ensure_dim(d.nrows() == p1 && d.ncols() == m1, || {
        format!(
            "plant feedthrough must be {p1}x{m1}, got {}x{}",
            d.nrows(),
            d.ncols()
        )
    })?;
    ensure_dim(j2_tilde.nrows() == p2 && j2_tilde.ncols() == p2, || {
        format!("controller output Ito part must be {p2}x{p2}")
    })?;
    if (r1 - r1.transpose()).norm() > tol::STRUCT_REL * (1.0 + r1.norm()) {
        return Err(Error::Structure(
            "plant energy matrix must be symmetric".into(),
        ));
    }
    validate_feedthrough(d)?;

    let a = &s.theta1 * (r1 + m1c.transpose() * &s.j1 * m1c + l1.transpose() * j2_tilde * l1) * 2.0;
    let b = &s.theta1 * m1c.transpose() * 2.0;
    let c = d * &s.j1 * m1c * 2.0;
    let e = &s.theta1 * l1.transpose() * 2.0;
    Ok(Plant {
        a,
        b,
        c,
        d: d.clone(),
        e,
    })
}

/// Controller drift and output matrices derived from the free triple:
///
/// ```text
/// a = 2 Theta2 R2 - (b J2 bᵀ + e J̃1 eᵀ) Theta2⁻¹ / 2
/// c = -d J2 bᵀ Theta2⁻¹
/// ```
pub fn derive_ac(
    pi: &ControllerTriple,
    s: &ItoCcrStructure,
    j1_tilde: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let t2_inv = s.theta2_inv()?;
    let r2 = &pi.energy;
    let b = &pi.noise_gain;
    let e = &pi.feedback_gain;
    let d = &pi.feedthrough;
    ensure_dim(
        r2.nrows() == s.n && b.ncols() == s.m2 && e.ncols() == s.p1 && d.nrows() == s.p2,
        || "controller triple does not match the declared structure".into(),
    )?;
    ensure_dim(j1_tilde.nrows() == s.p1 && j1_tilde.ncols() == s.p1, || {
        format!("plant output Ito part must be {0}x{0}", s.p1)
    })?;
    let a = &s.theta2 * r2 * 2.0
        - (b * &s.j2 * b.transpose() + e * j1_tilde * e.transpose()) * &t2_inv * 0.5;
    let c = -(d * &s.j2 * b.transpose() * &t2_inv);
    Ok((a, c))
}

/// A fully specified synthesis problem: structure, plant, fixed controller
/// feedthrough, cost weights and initial covariance. Controller triples vary
/// against this fixed data.
#[derive(Debug, Clone)]
pub struct SynthesisProblem {
    pub s: ItoCcrStructure,
    pub plant_phys: PlantPhysical,
    pub plant: Plant,
    /// Fixed controller feedthrough `d` (`p2 x m2`).
    pub ctrl_feedthrough: DMatrix<f64>,
    /// Weight on the plant variables (`r x n`).
    pub weight_state: DMatrix<f64>,
    /// Weight on the controller output drift (`r x p2`), full column rank.
    pub weight_output: DMatrix<f64>,
    /// Initial real covariance of the combined variables (`2n x 2n`).
    pub sigma: DMatrix<f64>,
    /// Plant output Ito part `D J1 Dᵀ`.
    pub j1_tilde: DMatrix<f64>,
    /// Controller output Ito part `d J2 dᵀ`.
    pub j2_tilde: DMatrix<f64>,
}

fn min_max_singular(m: &DMatrix<f64>) -> (f64, f64) {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0f64, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    (min, max)
}

impl SynthesisProblem {
    pub fn new(
        s: ItoCcrStructure,
        plant_phys: PlantPhysical,
        ctrl_feedthrough: DMatrix<f64>,
        weight_state: DMatrix<f64>,
        weight_output: DMatrix<f64>,
        sigma: DMatrix<f64>,
    ) -> Result<Self> {
        ensure_dim(
            ctrl_feedthrough.nrows() == s.p2 && ctrl_feedthrough.ncols() == s.m2,
            || format!("controller feedthrough must be {}x{}", s.p2, s.m2),
        )?;
        validate_feedthrough(&ctrl_feedthrough)?;
        let r = weight_state.nrows();
        ensure_dim(weight_state.ncols() == s.n, || {
            format!("state weight must have {} columns", s.n)
        })?;
        ensure_dim(
            weight_output.nrows() == r && weight_output.ncols() == s.p2,
            || format!("output weight must be {}x{}", r, s.p2),
        )?;
        let (smin, smax) = min_max_singular(&weight_output);
        if smin.is_nan() || smin <= tol::RANK_REL * smax.max(1.0) {
            return Err(Error::Structure(
                "output weight must have full column rank".into(),
            ));
        }
        ensure_dim(sigma.nrows() == 2 * s.n && sigma.ncols() == 2 * s.n, || {
            format!("initial covariance must be {0}x{0}", 2 * s.n)
        })?;
        if (&sigma - sigma.transpose()).norm() > tol::STRUCT_REL * (1.0 + sigma.norm()) {
            return Err(Error::Structure(
                "initial covariance must be symmetric".into(),
            ));
        }
        if !quantum_psd_check(&sigma, &s.theta, tol::STRUCT_REL * (1.0 + sigma.norm()))? {
            return Err(Error::Structure(
                "initial covariance fails the quantum positivity check".into(),
            ));
        }
        let j2_tilde = &ctrl_feedthrough * &s.j2 * ctrl_feedthrough.transpose();
        let plant = plant_from_physical(&plant_phys, &s, &j2_tilde)?;
        let j1_tilde = &plant.d * &s.j1 * plant.d.transpose();
        Ok(Self {
            s,
            plant_phys,
            plant,
            ctrl_feedthrough,
            weight_state,
            weight_output,
            sigma,
            j1_tilde,
            j2_tilde,
        })
    }

    /// Number of penalized output rows.
    pub fn r(&self) -> usize {
        self.weight_state.nrows()
    }

    /// A controller triple carrying this problem's fixed feedthrough.
    pub fn controller(
        &self,
        energy: DMatrix<f64>,
        noise_gain: DMatrix<f64>,
        feedback_gain: DMatrix<f64>,
    ) -> Result<ControllerTriple> {
        ControllerTriple::new(
            energy,
            noise_gain,
            feedback_gain,
            self.ctrl_feedthrough.clone(),
        )
    }
}

/// Closed-loop data: dynamics, input and output matrices of the combined
/// system together with the weights, covariance and structure they came from.
#[derive(Debug, Clone)]
pub struct ClosedLoopProblem {
    /// Closed-loop dynamics (`2n x 2n`).
    pub a: DMatrix<f64>,
    /// Closed-loop input matrix (`2n x (m1+m2)`).
    pub b: DMatrix<f64>,
    /// Closed-loop output matrix (`r x 2n`).
    pub c: DMatrix<f64>,
    pub weight_state: DMatrix<f64>,
    pub weight_output: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
    pub s: ItoCcrStructure,
}

/// Assembles the closed-loop matrices from the plant and a controller triple:
///
/// ```text
/// A_cl = [A   E c;  e C   a]    B_cl = [B   E d;  e D   b]    C_cl = [F   G c]
/// ```
pub fn assemble_closed_loop(
    p: &SynthesisProblem,
    pi: &ControllerTriple,
) -> Result<ClosedLoopProblem> {
    if pi.feedthrough != p.ctrl_feedthrough {
        return Err(Error::Structure(
            "controller feedthrough differs from the problem's fixed feedthrough".into(),
        ));
    }
    let (a_c, c_c) = derive_ac(pi, &p.s, &p.j1_tilde)?;
    let n = p.s.n;
    let (m1, m2) = (p.s.m1, p.s.m2);
    let r = p.r();
    let pl = &p.plant;

    let mut a = DMatrix::zeros(2 * n, 2 * n);
    a.view_mut((0, 0), (n, n)).copy_from(&pl.a);
    a.view_mut((0, n), (n, n)).copy_from(&(&pl.e * &c_c));
    a.view_mut((n, 0), (n, n))
        .copy_from(&(&pi.feedback_gain * &pl.c));
    a.view_mut((n, n), (n, n)).copy_from(&a_c);

    let mut b = DMatrix::zeros(2 * n, m1 + m2);
    b.view_mut((0, 0), (n, m1)).copy_from(&pl.b);
    b.view_mut((0, m1), (n, m2))
        .copy_from(&(&pl.e * &pi.feedthrough));
    b.view_mut((n, 0), (n, m1))
        .copy_from(&(&pi.feedback_gain * &pl.d));
    b.view_mut((n, m1), (n, m2)).copy_from(&pi.noise_gain);

    let mut c = DMatrix::zeros(r, 2 * n);
    c.view_mut((0, 0), (r, n)).copy_from(&p.weight_state);
    c.view_mut((0, n), (r, n))
        .copy_from(&(&p.weight_output * &c_c));

    Ok(ClosedLoopProblem {
        a,
        b,
        c,
        weight_state: p.weight_state.clone(),
        weight_output: p.weight_output.clone(),
        sigma: p.sigma.clone(),
        s: p.s.clone(),
    })
}

impl ClosedLoopProblem {
    /// Residual of the physical-realizability identity
    /// `‖A_cl Theta + Theta A_clᵀ + B_cl J B_clᵀ‖_F`.
    pub fn pr_residual(&self) -> f64 {
        (&self.a * &self.s.theta
            + &self.s.theta * self.a.transpose()
            + &self.b * &self.s.j * self.b.transpose())
        .norm()
    }

    /// Infinite-horizon Gramians of the closed loop (requires Hurwitz dynamics).
    pub fn gramians_infinite(&self) -> Result<lyapunov::GramianSet> {
        lyapunov::gramians_infinite_raw(&self.a, &self.b, &self.c)
    }

    /// Discounted Gramians and their horizon derivatives at horizon `t`.
    pub fn gramians_discounted(&self, t: f64) -> Result<lyapunov::DiscountedGramianSet> {
        lyapunov::gramians_discounted_raw(&self.a, &self.b, &self.c, &self.sigma, t)
    }

    /// Transient covariance at time `t` starting from `sigma`.
    pub fn covariance_at(&self, sigma: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>> {
        lyapunov::covariance_at(&self.a, &self.b, sigma, t)
    }

    /// Quadrature route to the discounted covariance (cross-check oracle).
    pub fn discounted_average_quadrature(
        &self,
        sigma: &DMatrix<f64>,
        horizon: f64,
        t_max: f64,
        steps: usize,
    ) -> Result<DMatrix<f64>> {
        lyapunov::discounted_average_quadrature(&self.a, &self.b, sigma, horizon, t_max, steps)
    }
}

/// Closed-loop energy and coupling matrices recovered from the physical data
/// on both sides of the loop:
///
/// ```text
/// R = [R1                 (L1ᵀ c + Cᵀ L2)/2;   sym        R2]
/// M = [M1   Dᵀ L2;   dᵀ L1   M2]
/// ```
///
/// with `M2 = (Theta2⁻¹ b)ᵀ / 2`, `L2 = (Theta2⁻¹ e)ᵀ / 2`. Consistency with
/// the assembled dynamics is `A_cl = 2 Theta (R + Mᵀ J M)`.
pub fn closed_loop_energy(
    p: &SynthesisProblem,
    pi: &ControllerTriple,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let s = &p.s;
    let t2_inv = s.theta2_inv()?;
    let (_, c_c) = derive_ac(pi, s, &p.j1_tilde)?;
    let m2c = (&t2_inv * &pi.noise_gain).transpose() * 0.5;
    let l2 = (&t2_inv * &pi.feedback_gain).transpose() * 0.5;
    let (n, m1, m2, p1, p2) = (s.n, s.m1, s.m2, s.p1, s.p2);
    let phys = &p.plant_phys;
    let cpl = &p.plant.c;

    let off = (phys.feedback_coupling.transpose() * &c_c + cpl.transpose() * &l2) * 0.5;
    let mut r = DMatrix::zeros(2 * n, 2 * n);
    r.view_mut((0, 0), (n, n)).copy_from(&phys.energy);
    r.view_mut((0, n), (n, n)).copy_from(&off);
    r.view_mut((n, 0), (n, n)).copy_from(&off.transpose());
    r.view_mut((n, n), (n, n)).copy_from(&pi.energy);

    let mut m = DMatrix::zeros(m1 + m2, 2 * n);
    m.view_mut((0, 0), (m1, n)).copy_from(&phys.field_coupling);
    m.view_mut((0, n), (m1, n))
        .copy_from(&(phys.feedthrough.transpose() * &l2));
    m.view_mut((m1, 0), (m2, n))
        .copy_from(&(pi.feedthrough.transpose() * &phys.feedback_coupling));
    m.view_mut((m1, n), (m2, n)).copy_from(&m2c);
    let _ = (p1, p2);
    Ok((r, m))
}

/// Sub-block of a `2n x 2n` matrix partitioned into order-`n` blocks.
pub fn block_n(m: &DMatrix<f64>, i: usize, j: usize, n: usize) -> DMatrix<f64> {
    m.view((i * n, j * n), (n, n)).into_owned()
}

/// Problem dimensions for the random generator.
#[derive(Debug, Clone, Copy)]
pub struct ProblemDims {
    pub n: usize,
    pub m1: usize,
    pub m2: usize,
    pub p1: usize,
    pub p2: usize,
    pub r: usize,
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0) * scale)
}

fn random_symmetric(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DMatrix<f64> {
    let raw = random_matrix(rng, n, n, scale);
    (&raw + raw.transpose()) * 0.5
}

/// Deterministic seeded random problem data: physical plant, controller
/// triple, weights with a full-column-rank output weight, identity covariance.
#[allow(clippy::type_complexity)]
pub fn random_problem(
    dims: ProblemDims,
    seed: u64,
    scale: f64,
) -> Result<(
    PlantPhysical,
    ControllerTriple,
    DMatrix<f64>,
    DMatrix<f64>,
    DMatrix<f64>,
)> {
    if scale <= 0.0 {
        return Err(Error::Precondition(format!(
            "scale must be positive, got {scale}"
        )));
    }
    // validates parity and ordering constraints up front
    let s = ItoCcrStructure::canonical(dims.n, dims.m1, dims.m2, dims.p1, dims.p2)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phys = PlantPhysical {
        energy: random_symmetric(&mut rng, dims.n, scale),
        field_coupling: random_matrix(&mut rng, dims.m1, dims.n, scale),
        feedback_coupling: random_matrix(&mut rng, dims.p2, dims.n, scale),
        feedthrough: canonical_feedthrough(dims.p1, dims.m1)?,
    };
    let pi = ControllerTriple::new(
        random_symmetric(&mut rng, dims.n, scale),
        random_matrix(&mut rng, dims.n, dims.m2, scale),
        random_matrix(&mut rng, dims.n, dims.p1, scale),
        canonical_feedthrough(dims.p2, dims.m2)?,
    )?;
    let f = random_matrix(&mut rng, dims.r, dims.n, scale);
    let mut g = random_matrix(&mut rng, dims.r, dims.p2, scale);
    for _ in 0..64 {
        let (smin, smax) = min_max_singular(&g);
        if smin > 1e-3 * smax.max(1.0) {
            break;
        }
        g = random_matrix(&mut rng, dims.r, dims.p2, scale);
    }
    let sigma = DMatrix::identity(2 * dims.n, 2 * dims.n);
    let _ = s;
    Ok((phys, pi, f, g, sigma))
}

/// Convenience wrapper: a validated [`SynthesisProblem`] plus a starting
/// controller triple from one seed.
pub fn random_synthesis_problem(
    dims: ProblemDims,
    seed: u64,
    scale: f64,
) -> Result<(SynthesisProblem, ControllerTriple)> {
    let (phys, pi, f, g, sigma) = random_problem(dims, seed, scale)?;
    let s = ItoCcrStructure::canonical(dims.n, dims.m1, dims.m2, dims.p1, dims.p2)?;
    let problem = SynthesisProblem::new(
        s,
        phys,
        canonical_feedthrough(dims.p2, dims.m2)?,
        f,
        g,
        sigma,
    )?;
    Ok((problem, pi))
}
