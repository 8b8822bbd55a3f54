//! Continuation in the effective time horizon: zero-horizon initialization,
//! the stationarity-tracking ODE with a fourth-order predictor and a guarded
//! Newton corrector, endpoint classification, and a line-search descent
//! polish.

use nalgebra::{DMatrix, DVector};

use crate::cost;
pub use crate::cost::Horizon;
use crate::error::{Error, Result};
use crate::geometry::{normal_basis, HessianContext, SubspaceBasis};
use crate::lyapunov::{max_admissible_t, spectral_abscissa};
use crate::model::{assemble_closed_loop, block_n, SynthesisProblem};
use crate::param::{ControllerTriple, GradientTriple};
use crate::tol;

/// Zero-horizon controller data: the stationarity-forced output map, the
/// minimum-norm noise gain realizing it, and (when the output map has full
/// column rank) the matching feedback gain.
#[derive(Debug, Clone)]
pub struct ZeroHorizonInit {
    /// Forced controller output map `c0` (`p2 x n`).
    pub output_map: DMatrix<f64>,
    /// Noise gain `b0` realizing `c0` (`n x m2`).
    pub noise_gain: DMatrix<f64>,
    /// Feedback gain `e0`; `None` when `c0` is column-rank deficient, in
    /// which case the zero-horizon construction refuses rather than invent a
    /// pseudo-inverse meaning.
    pub feedback_gain: Option<DMatrix<f64>>,
    /// `‖Sigma21 Fᵀ G + Sigma22 c0ᵀ GᵀG‖_F` (stationarity of the output map).
    pub stationarity_residual: f64,
    /// `‖(C0ᵀ C0 Sigma)₂₂‖_F` with `C0 = [F, G c0]`.
    pub hankel_residual: f64,
}

/// Zero-horizon initialization with the minimum-norm completion of the noise
/// gain (free completion term set to zero); an explicit completion matrix can
/// be supplied through [`init_zero_horizon_with`].
pub fn init_zero_horizon(p: &SynthesisProblem) -> Result<ZeroHorizonInit> {
    init_zero_horizon_with(p, None)
}

/// Zero-horizon initialization with an explicit completion term `chi`
/// (`n x m2`) for the noise gain: `b0 = Theta2 (c0ᵀ d + chi (I - dᵀd)) J2`.
pub fn init_zero_horizon_with(
    p: &SynthesisProblem,
    chi: Option<&DMatrix<f64>>,
) -> Result<ZeroHorizonInit> {
    let s = &p.s;
    let n = s.n;
    let f = &p.weight_state;
    let g = &p.weight_output;
    let d = &p.ctrl_feedthrough;
    let sigma11 = block_n(&p.sigma, 0, 0, n);
    let sigma12 = block_n(&p.sigma, 0, 1, n);
    let sigma21 = block_n(&p.sigma, 1, 0, n);
    let sigma22 = block_n(&p.sigma, 1, 1, n);

    let sigma22_inv = sigma22.clone().try_inverse().ok_or_else(|| {
        Error::Precondition("controller block of the initial covariance is singular".into())
    })?;
    let gtg = g.transpose() * g;
    let gtg_inv = gtg
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Structure("output weight Gram matrix is singular".into()))?;
    let c0 = -(&gtg_inv * g.transpose() * f * &sigma12 * &sigma22_inv);

    let mut completion = DMatrix::zeros(n, s.m2);
    if let Some(chi) = chi {
        if chi.nrows() != n || chi.ncols() != s.m2 {
            return Err(Error::Dimension(format!(
                "completion term must be {}x{}, got {}x{}",
                n,
                s.m2,
                chi.nrows(),
                chi.ncols()
            )));
        }
        let proj = DMatrix::identity(s.m2, s.m2) - d.transpose() * d;
        completion = chi * proj;
    }
    let b0 = &s.theta2 * (c0.transpose() * d + completion) * &s.j2;

    let stationarity_residual =
        (&sigma21 * f.transpose() * g + &sigma22 * c0.transpose() * &gtg).norm();

    // output matrix at the zero-horizon point and its Hankelian block
    let mut c_cl = DMatrix::zeros(p.r(), 2 * n);
    c_cl.view_mut((0, 0), (p.r(), n)).copy_from(f);
    c_cl.view_mut((0, n), (p.r(), n)).copy_from(&(g * &c0));
    let hank = c_cl.transpose() * &c_cl * &p.sigma;
    let hankel_residual = block_n(&hank, 1, 1, n).norm();

    // feedback gain only exists when the output map has full column rank
    let sv = c0.clone().svd(false, false).singular_values;
    let smax = sv.iter().cloned().fold(0.0f64, f64::max);
    let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    let full_column_rank = c0.nrows() >= c0.ncols() && smax > 0.0 && smin > tol::RANK_REL * smax;
    let feedback_gain = if full_column_rank {
        let q22 = c0.transpose() * &gtg * &c0;
        let q22_inv = q22
            .try_inverse()
            .ok_or_else(|| Error::Numeric("zero-horizon output Gram block is singular".into()))?;
        let e0 = -(&sigma21 * p.plant.c.transpose())
            - q22_inv
                * c0.transpose()
                * g.transpose()
                * f
                * (&sigma11 * p.plant.c.transpose() + &p.plant.b * p.plant.d.transpose());
        Some(e0)
    } else {
        None
    };

    Ok(ZeroHorizonInit {
        output_map: c0,
        noise_gain: b0,
        feedback_gain,
        stationarity_residual,
        hankel_residual,
    })
}

#[allow(clippy::type_complexity)]
fn energy_block_newton_system(
    ctx: &HessianContext<'_>,
    grad_energy: &DMatrix<f64>,
    n: usize,
) -> Result<(DMatrix<f64>, DVector<f64>, Vec<DMatrix<f64>>)> {
    // orthonormal basis of the symmetric matrices
    let mut basis = Vec::with_capacity(n * (n + 1) / 2);
    let rt2 = std::f64::consts::SQRT_2;
    for i in 0..n {
        let mut m = DMatrix::zeros(n, n);
        m[(i, i)] = 1.0;
        basis.push(m);
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let mut m = DMatrix::zeros(n, n);
            m[(i, j)] = 1.0 / rt2;
            m[(j, i)] = 1.0 / rt2;
            basis.push(m);
        }
    }
    let ns = basis.len();
    let dims = ctx.dims();
    let mut h = DMatrix::zeros(ns, ns);
    let mut gv = DVector::zeros(ns);
    for (k, sk) in basis.iter().enumerate() {
        gv[k] = grad_energy.dot(sk);
        let dir = GradientTriple {
            energy: sk.clone(),
            noise_gain: DMatrix::zeros(n, dims.m2),
            feedback_gain: DMatrix::zeros(n, dims.p1),
        };
        let img = ctx.apply(&dir)?.energy;
        for (i, si) in basis.iter().enumerate() {
            h[(i, k)] = img.dot(si);
        }
    }
    h = (&h + h.transpose()) * 0.5;
    Ok((h, gv, basis))
}

/// Stationarity solve for the controller energy matrix at a small anchor
/// horizon with the gains held fixed: Newton iteration on the energy block
/// of the gradient, with gradient-step fallback and step backtracking.
pub fn init_energy(
    p: &SynthesisProblem,
    t0: f64,
    noise_gain: &DMatrix<f64>,
    feedback_gain: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let n = p.s.n;
    let tol_grad = 1e-9;
    let max_iters = 80;
    let mut energy = DMatrix::<f64>::zeros(n, n);

    let pi0 = p.controller(energy.clone(), noise_gain.clone(), feedback_gain.clone())?;
    let cl = assemble_closed_loop(p, &pi0)?;
    if !crate::lyapunov::is_t_stabilizing(&cl.a, t0) {
        return Err(Error::Precondition(format!(
            "anchor horizon {t0:.3e} is inadmissible at the zero-energy start (max {:.3e})",
            max_admissible_t(&cl.a)
        )));
    }

    let mut grad_norm = f64::INFINITY;
    for iter in 0..max_iters {
        let pi = p.controller(energy.clone(), noise_gain.clone(), feedback_gain.clone())?;
        let ctx = HessianContext::new(p, &pi, t0)?;
        let g_full = ctx.gradient()?;
        grad_norm = g_full.energy.norm();
        if grad_norm <= tol_grad {
            return Ok(energy);
        }
        let (h, gv, basis) = energy_block_newton_system(&ctx, &g_full.energy, n)?;
        let step_coeffs = match h.clone().lu().solve(&(-&gv)) {
            Some(sol) if sol.iter().all(|v| v.is_finite()) => sol,
            _ => -&gv, // gradient fallback when the block is singular
        };
        let mut direction = DMatrix::<f64>::zeros(n, n);
        for (k, sk) in basis.iter().enumerate() {
            direction += sk * step_coeffs[k];
        }

        let mut tau = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial = &energy + &direction * tau;
            let trial = (&trial + trial.transpose()) * 0.5;
            let pi_trial =
                p.controller(trial.clone(), noise_gain.clone(), feedback_gain.clone())?;
            let cl_trial = assemble_closed_loop(p, &pi_trial)?;
            if crate::lyapunov::is_t_stabilizing(&cl_trial.a, t0) {
                let g_trial = cost::grad_discounted(p, &pi_trial, t0)?;
                let gn_trial = g_trial.energy.norm();
                if gn_trial < grad_norm || gn_trial <= tol_grad {
                    energy = trial;
                    accepted = true;
                    break;
                }
            }
            tau *= 0.5;
        }
        if !accepted {
            return Err(Error::NonConvergence(format!(
                "energy stationarity solve stalled at iteration {iter} with gradient {grad_norm:.3e}"
            )));
        }
    }
    Err(Error::NonConvergence(format!(
        "energy stationarity solve (cap {max_iters}) left gradient at {grad_norm:.3e}"
    )))
}

/// Restricted-Hessian data at a point of the continuation path.
struct NormalSystem {
    basis: SubspaceBasis,
    h_normal: DMatrix<f64>,
    min_eig: f64,
}

fn normal_system(
    p: &SynthesisProblem,
    pi: &ControllerTriple,
    horizon: Horizon,
) -> Result<NormalSystem> {
    let ctx = HessianContext::with_horizon(p, pi, horizon)?;
    let basis = normal_basis(pi, &p.s)?;
    let dn = basis.dim();
    let images: Vec<GradientTriple> = basis
        .vectors
        .iter()
        .map(|v| ctx.apply(v))
        .collect::<Result<_>>()?;
    let mut h = DMatrix::zeros(dn, dn);
    for i in 0..dn {
        for j in 0..dn {
            h[(i, j)] = basis.vectors[i].dot(&images[j]);
        }
    }
    h = (&h + h.transpose()) * 0.5;
    let eigs = h.symmetric_eigenvalues();
    let min_eig = eigs.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(NormalSystem {
        basis,
        h_normal: h,
        min_eig,
    })
}

fn guarded_solve(h: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let eigs = h.symmetric_eigenvalues();
    let max_abs = eigs.iter().fold(0.0f64, |acc, &v| acc.max(v.abs()));
    let min_abs = eigs.iter().fold(f64::INFINITY, |acc, &v| acc.min(v.abs()));
    if min_abs.is_nan() || min_abs <= tol::HESSIAN_GUARD * max_abs {
        return Err(Error::Continuation(format!(
            "Hessian is near-singular (|eig| range {min_abs:.3e}..{max_abs:.3e})"
        )));
    }
    h.clone()
        .lu()
        .solve(rhs)
        .ok_or_else(|| Error::Continuation("Hessian solve failed".into()))
}

/// Damped Newton direction for the corrector: falls back to a Tikhonov shift
/// when the Hessian is near the singularity guard, so the corrector can walk
/// through nearly flat directions instead of aborting. The line search on the
/// gradient norm keeps the iteration monotone either way.
fn damped_solve(h: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    match guarded_solve(h, rhs) {
        Ok(sol) => Ok(sol),
        Err(_) => {
            let eigs = h.symmetric_eigenvalues();
            let max_abs = eigs.iter().fold(0.0f64, |acc, &v| acc.max(v.abs()));
            let lambda = (1e-6 * max_abs).max(1e-12);
            let dim = h.nrows();
            let shifted = h + DMatrix::<f64>::identity(dim, dim) * lambda;
            shifted
                .lu()
                .solve(rhs)
                .ok_or_else(|| Error::Continuation("damped Hessian solve failed".into()))
        }
    }
}

impl NormalSystem {
    fn solve(&self, rhs: &GradientTriple) -> Result<GradientTriple> {
        let coeffs = self.basis.coefficients(rhs);
        let sol = guarded_solve(&self.h_normal, &coeffs)?;
        Ok(self.basis.combine(&sol))
    }
}

/// The Hessian assembled on the canonical basis of the whole parameter space.
struct FullSystem {
    h: DMatrix<f64>,
}

fn full_system(
    p: &SynthesisProblem,
    pi: &ControllerTriple,
    horizon: Horizon,
) -> Result<FullSystem> {
    let ctx = HessianContext::with_horizon(p, pi, horizon)?;
    let dims = pi.dims();
    let basis = GradientTriple::canonical_basis(dims);
    let dim = basis.len();
    let mut h = DMatrix::zeros(dim, dim);
    for (j, u) in basis.iter().enumerate() {
        let img = ctx.apply(u)?.to_coords();
        h.column_mut(j).copy_from(&img);
    }
    h = (&h + h.transpose()) * 0.5;
    Ok(FullSystem { h })
}

impl FullSystem {
    fn solve(&self, rhs: &GradientTriple) -> Result<GradientTriple> {
        let sol = guarded_solve(&self.h, &rhs.to_coords())?;
        GradientTriple::from_coords(rhs.dims(), &sol)
    }
}

/// Right-hand side of the continuation ODE at `(pi, t)` in the form the
/// restricted second-order conditions dictate:
/// `dΠ/dT = -(Hess|_N)⁻¹ P_N(∂_T ∂_Π V_T)`, an element of the normal
/// subspace by construction.
pub fn homotopy_rhs(p: &SynthesisProblem, pi: &ControllerTriple, t: f64) -> Result<GradientTriple> {
    let mixed = cost::grad_t_derivative(p, pi, t)?;
    if mixed.norm() == 0.0 {
        return Ok(GradientTriple::zeros(pi.dims()));
    }
    let sys = normal_system(p, pi, Horizon::Finite(t))?;
    Ok(sys.solve(&mixed)?.scaled(-1.0))
}

/// Predictor field used by the continuation driver: the unrestricted solve
/// `dΠ/dT = -Hess⁻¹ (∂_T ∂_Π V_T)`, which tracks full stationary points of
/// the fixed-covariance cost.
fn full_rhs(p: &SynthesisProblem, pi: &ControllerTriple, t: f64) -> Result<GradientTriple> {
    let mixed = cost::grad_t_derivative(p, pi, t)?;
    if mixed.norm() == 0.0 {
        return Ok(GradientTriple::zeros(pi.dims()));
    }
    let sys = full_system(p, pi, Horizon::Finite(t))?;
    Ok(sys.solve(&mixed)?.scaled(-1.0))
}

fn eval_grad(
    p: &SynthesisProblem,
    pi: &ControllerTriple,
    horizon: Horizon,
) -> Result<GradientTriple> {
    match horizon {
        Horizon::Finite(t) => cost::grad_discounted(p, pi, t),
        Horizon::Infinite => cost::grad_infinite(p, pi),
    }
}

/// Newton iteration driving the cost gradient to `tol_grad` at a fixed
/// horizon. At a finite horizon the step solves against the full Hessian
/// (the fixed-covariance cost has no orbit degeneracy); at infinite horizon
/// the group invariance is exact, the full Hessian is singular along the
/// tangent subspace, and the step is solved in the normal subspace where the
/// gradient lives. Returns the corrected triple, its gradient norm, and the
/// smallest eigenvalue of the restricted Hessian at the accepted point.
pub fn newton_correct(
    p: &SynthesisProblem,
    pi: &ControllerTriple,
    horizon: Horizon,
    tol_grad: f64,
    max_iters: usize,
) -> Result<(ControllerTriple, f64, f64)> {
    let mut current = pi.clone();
    let mut grad = eval_grad(p, &current, horizon)?;
    let mut grad_norm = grad.norm();
    for _ in 0..max_iters {
        if grad_norm <= tol_grad {
            let sys = normal_system(p, &current, horizon)?;
            return Ok((current, grad_norm, sys.min_eig));
        }
        let full_step = match horizon {
            Horizon::Finite(_) => full_system(p, &current, horizon)
                .and_then(|sys| damped_solve(&sys.h, &grad.to_coords()))
                .and_then(|sol| GradientTriple::from_coords(grad.dims(), &sol))
                .map(|step| step.scaled(-1.0))
                .ok(),
            Horizon::Infinite => None,
        };
        let reduced_step = {
            let sys = normal_system(p, &current, horizon)?;
            let sol = damped_solve(&sys.h_normal, &sys.basis.coefficients(&grad))?;
            sys.basis.combine(&sol).scaled(-1.0)
        };
        // the unrestricted step resolves the whole gradient but degrades when
        // the orbit block of the Hessian flattens at large horizons; the
        // normal-subspace step stays well conditioned there
        let mut advanced = false;
        'steps: for step in full_step.iter().chain(std::iter::once(&reduced_step)) {
            let mut tau = 1.0;
            for _ in 0..30 {
                let trial = current.offset(step, tau);
                if let Ok(g_trial) = eval_grad(p, &trial, horizon) {
                    let gn = g_trial.norm();
                    if gn < grad_norm || gn <= tol_grad {
                        current = trial;
                        grad = g_trial;
                        grad_norm = gn;
                        advanced = true;
                        break 'steps;
                    }
                }
                tau *= 0.5;
            }
        }
        if !advanced {
            return Err(Error::Continuation(format!(
                "corrector stalled at gradient norm {grad_norm:.3e}"
            )));
        }
    }
    if grad_norm <= tol_grad {
        let sys = normal_system(p, &current, horizon)?;
        return Ok((current, grad_norm, sys.min_eig));
    }
    Err(Error::Continuation(format!(
        "corrector did not reach {tol_grad:.1e} within {max_iters} iterations (gradient {grad_norm:.3e})"
    )))
}

/// Continuation driver configuration.
#[derive(Debug, Clone)]
pub struct ContinuationConfig {
    /// Starting horizon; when `None` the anchor defaults to
    /// `1e-3 · (1 + 1/(1 + max(0, abscissa)))` at the zero-energy start.
    pub t0: Option<f64>,
    /// Final horizon of the sweep.
    pub t_max: f64,
    /// Initial step in `s = ln T`.
    pub h0: f64,
    /// Smallest allowed step in `s`; persistent halving below this aborts.
    pub h_min: f64,
    /// Largest allowed step in `s`.
    pub h_max: f64,
    /// Corrector target on the gradient norm at every accepted node.
    pub tol_corrector: f64,
    pub max_steps: usize,
    pub max_corrector_iters: usize,
}

impl Default for ContinuationConfig {
    fn default() -> Self {
        Self {
            t0: None,
            t_max: 1e4,
            h0: 0.25,
            h_min: 1e-8,
            h_max: 1.0,
            tol_corrector: tol::CORRECTOR,
            max_steps: 400,
            max_corrector_iters: 30,
        }
    }
}

/// One accepted node of the continuation path.
#[derive(Debug, Clone)]
pub struct HomotopyState {
    pub t: f64,
    pub pi: ControllerTriple,
    pub grad_norm: f64,
    pub min_eig_normal: f64,
    /// Spectral abscissa of the unshifted closed-loop dynamics.
    pub abscissa: f64,
    pub cost: f64,
}

/// Terminal classification of a continuation run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Stabilizing,
    Marginal,
    Diverged,
    StepFailure,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Verdict::Stabilizing => "stabilizing",
            Verdict::Marginal => "marginal",
            Verdict::Diverged => "diverged",
            Verdict::StepFailure => "step_failure",
        };
        f.write_str(s)
    }
}

/// The record of a continuation run: accepted nodes in strictly increasing
/// horizon order, the terminal verdict, and the configuration used.
#[derive(Debug, Clone)]
pub struct HomotopyTrace {
    pub states: Vec<HomotopyState>,
    pub verdict: Verdict,
    pub config: ContinuationConfig,
}

fn classify_abscissa(abscissa: f64) -> Verdict {
    if abscissa < -tol::STABILIZING_ABSCISSA {
        Verdict::Stabilizing
    } else if abscissa.abs() <= tol::STABILIZING_ABSCISSA {
        Verdict::Marginal
    } else {
        Verdict::Diverged
    }
}

fn node_state(
    p: &SynthesisProblem,
    pi: &ControllerTriple,
    t: f64,
    grad_norm: f64,
    min_eig_normal: f64,
) -> Result<HomotopyState> {
    let cl = assemble_closed_loop(p, pi)?;
    let cost = cost::cost_discounted(&cl, t)?.value;
    Ok(HomotopyState {
        t,
        pi: pi.clone(),
        grad_norm,
        min_eig_normal,
        abscissa: spectral_abscissa(&cl.a),
        cost,
    })
}

/// Default anchor horizon from the abscissa at the zero-energy start.
pub fn default_anchor_horizon(p: &SynthesisProblem, init: &ZeroHorizonInit) -> Result<f64> {
    let e0 = init.feedback_gain.as_ref().ok_or_else(|| {
        Error::Precondition(
            "zero-horizon output map is column-rank deficient; feedback gain is undefined".into(),
        )
    })?;
    let pi = p.controller(
        DMatrix::zeros(p.s.n, p.s.n),
        init.noise_gain.clone(),
        e0.clone(),
    )?;
    let cl = assemble_closed_loop(p, &pi)?;
    let alpha_plus = spectral_abscissa(&cl.a).max(0.0);
    Ok(1e-3 * (1.0 + 1.0 / (1.0 + alpha_plus)))
}

/// Integrates the continuation ODE in `s = ln T` with a Runge–Kutta
/// fourth-order predictor and a Newton corrector in the normal subspace.
/// Steps are accepted only if the horizon stays admissible and the corrector
/// converges; failures halve the step until `h_min`.
pub fn continuation_run(p: &SynthesisProblem, config: ContinuationConfig) -> Result<HomotopyTrace> {
    let init = init_zero_horizon(p)?;
    let e0 = init.feedback_gain.clone().ok_or_else(|| {
        Error::Precondition(
            "zero-horizon output map is column-rank deficient; continuation cannot start".into(),
        )
    })?;
    if !(config.tol_corrector > 0.0 && config.h0 > 0.0 && config.h_min > 0.0) {
        return Err(Error::Precondition(
            "corrector tolerance and step bounds must be positive".into(),
        ));
    }
    let t0 = match config.t0 {
        Some(t) => t,
        None => default_anchor_horizon(p, &init)?,
    };
    if !(t0 > 0.0 && t0 < config.t_max) {
        return Err(Error::Precondition(format!(
            "anchor horizon {t0:.3e} must lie in (0, t_max = {:.3e})",
            config.t_max
        )));
    }
    let r2_0 = init_energy(p, t0, &init.noise_gain, &e0)?;
    let pi0 = p.controller(r2_0, init.noise_gain.clone(), e0)?;
    let (pi0, g0, me0) = newton_correct(
        p,
        &pi0,
        Horizon::Finite(t0),
        config.tol_corrector,
        config.max_corrector_iters,
    )?;

    let mut states = vec![node_state(p, &pi0, t0, g0, me0)?];
    let mut pi = pi0;
    let mut s_cur = t0.ln();
    let s_end = config.t_max.ln();
    let mut h = config.h0.min(config.h_max);
    let mut verdict = None;

    // the unrestricted field resolves the slow orbit drift of the tracked
    // stationary point; once its orbit block falls under the singularity
    // guard at large horizons, the restricted field takes over and the
    // corrector absorbs the remaining drift
    let field = |pi_at: &ControllerTriple, s_at: f64| -> Result<GradientTriple> {
        let t_at = s_at.exp();
        let rhs = match full_rhs(p, pi_at, t_at) {
            Ok(rhs) => rhs,
            Err(Error::Continuation(_)) => homotopy_rhs(p, pi_at, t_at)?,
            Err(other) => return Err(other),
        };
        Ok(rhs.scaled(t_at))
    };

    let mut steps = 0;
    while s_cur < s_end - 1e-12 {
        if steps >= config.max_steps {
            log::info!(
                "continuation stopped at the step cap ({})",
                config.max_steps
            );
            verdict = Some(Verdict::StepFailure);
            break;
        }
        let h_try = h.min(s_end - s_cur);
        let attempt = (|| -> Result<(ControllerTriple, f64, f64)> {
            let k1 = field(&pi, s_cur)?;
            let k2 = field(&pi.offset(&k1, h_try / 2.0), s_cur + h_try / 2.0)?;
            let k3 = field(&pi.offset(&k2, h_try / 2.0), s_cur + h_try / 2.0)?;
            let k4 = field(&pi.offset(&k3, h_try), s_cur + h_try)?;
            let increment = k1
                .add_scaled(&k2, 2.0)
                .add_scaled(&k3, 2.0)
                .add_scaled(&k4, 1.0)
                .scaled(h_try / 6.0);
            let predicted = pi.offset(&increment, 1.0);
            let t_new = (s_cur + h_try).exp();
            newton_correct(
                p,
                &predicted,
                Horizon::Finite(t_new),
                config.tol_corrector,
                config.max_corrector_iters,
            )
        })();
        match attempt {
            Ok((pi_new, grad_norm, min_eig_normal)) => {
                let t_new = (s_cur + h_try).exp();
                let state = node_state(p, &pi_new, t_new, grad_norm, min_eig_normal)?;
                if !state.cost.is_finite() || state.pi.energy.norm() > 1e12 {
                    verdict = Some(Verdict::Diverged);
                    break;
                }
                log::debug!(
                    "accepted node: T={:.6e} cost={:.6e} grad={:.3e} abscissa={:+.3e}",
                    state.t,
                    state.cost,
                    state.grad_norm,
                    state.abscissa
                );
                states.push(state);
                pi = states.last().expect("nonempty").pi.clone();
                s_cur += h_try;
                h = (h * 1.3).min(config.h_max);
                steps += 1;
            }
            Err(err) => {
                h *= 0.5;
                log::debug!("step rejected ({err}); halving to h={h:.3e}");
                if h < config.h_min {
                    log::info!(
                        "continuation abandoned: step fell below {:.1e}",
                        config.h_min
                    );
                    verdict = Some(Verdict::StepFailure);
                    break;
                }
            }
        }
    }

    let verdict = verdict.unwrap_or_else(|| {
        classify_abscissa(states.last().expect("trace has the anchor node").abscissa)
    });
    Ok(HomotopyTrace {
        states,
        verdict,
        config,
    })
}

/// Endpoint report: the final controller, its verdict, and when it is
/// stabilizing the infinite-horizon cost and gradient norm.
#[derive(Debug, Clone)]
pub struct FinalizeReport {
    pub controller: ControllerTriple,
    pub verdict: Verdict,
    pub v_infinite: Option<f64>,
    pub grad_infinite_norm: Option<f64>,
    pub abscissa: f64,
}

/// Classifies the last trace node and evaluates the infinite-horizon cost and
/// first-order residual when the endpoint is stabilizing.
pub fn finalize(p: &SynthesisProblem, trace: &HomotopyTrace) -> Result<FinalizeReport> {
    let last = trace
        .states
        .last()
        .ok_or_else(|| Error::Precondition("trace holds no accepted node".into()))?;
    let cl = assemble_closed_loop(p, &last.pi)?;
    let abscissa = spectral_abscissa(&cl.a);
    let verdict = classify_abscissa(abscissa);
    let (v_infinite, grad_infinite_norm) = if verdict == Verdict::Stabilizing {
        let v = cost::cost_infinite(&cl)?.value;
        let g = cost::grad_infinite(p, &last.pi)?.norm();
        (Some(v), Some(g))
    } else {
        (None, None)
    };
    Ok(FinalizeReport {
        controller: last.pi.clone(),
        verdict,
        v_infinite,
        grad_infinite_norm,
        abscissa,
    })
}

/// Line-search descent configuration.
#[derive(Debug, Clone)]
pub struct PolishConfig {
    pub tol_grad: f64,
    pub max_iters: usize,
    pub initial_step: f64,
    pub min_step: f64,
}

impl Default for PolishConfig {
    fn default() -> Self {
        Self {
            tol_grad: 1e-8,
            max_iters: 400,
            initial_step: 1.0,
            min_step: 1e-14,
        }
    }
}

/// Outcome of a descent polish.
#[derive(Debug, Clone)]
pub struct PolishOutcome {
    pub pi: ControllerTriple,
    pub converged: bool,
    /// Set when no admissible decrease step could be found.
    pub no_step: bool,
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub final_grad_norm: f64,
}

fn eval_cost_grad(
    p: &SynthesisProblem,
    pi: &ControllerTriple,
    horizon: Horizon,
) -> Result<(f64, GradientTriple)> {
    let cl = assemble_closed_loop(p, pi)?;
    match horizon {
        Horizon::Finite(t) => Ok((
            cost::cost_discounted(&cl, t)?.value,
            cost::grad_discounted(p, pi, t)?,
        )),
        Horizon::Infinite => Ok((cost::cost_infinite(&cl)?.value, cost::grad_infinite(p, pi)?)),
    }
}

/// Backtracking gradient descent along the negative gradient projected onto
/// the normal subspace; steps that leave the admissible set are rejected and
/// the cost never increases across accepted steps.
pub fn gradient_descent_polish(
    p: &SynthesisProblem,
    pi: &ControllerTriple,
    horizon: Horizon,
    config: &PolishConfig,
) -> Result<PolishOutcome> {
    let (mut cost_cur, mut grad) = eval_cost_grad(p, pi, horizon)?;
    let initial_cost = cost_cur;
    let mut current = pi.clone();
    let mut no_step = false;
    let mut iterations = 0;

    for _ in 0..config.max_iters {
        let grad_norm = grad.norm();
        if grad_norm <= config.tol_grad {
            return Ok(PolishOutcome {
                pi: current,
                converged: true,
                no_step: false,
                iterations,
                initial_cost,
                final_cost: cost_cur,
                final_grad_norm: grad_norm,
            });
        }
        let nb = normal_basis(&current, &p.s)?;
        let projected = crate::geometry::project(&grad, &nb);
        let direction = projected.scaled(-1.0);
        let slope = grad.dot(&direction); // negative by construction
        let mut tau = config.initial_step;
        let mut advanced = false;
        while tau >= config.min_step {
            let trial = current.offset(&direction, tau);
            if let Ok((cost_trial, grad_trial)) = eval_cost_grad(p, &trial, horizon) {
                if cost_trial <= cost_cur + 1e-4 * tau * slope {
                    current = trial;
                    cost_cur = cost_trial;
                    grad = grad_trial;
                    advanced = true;
                    break;
                }
            }
            tau *= 0.5;
        }
        iterations += 1;
        if !advanced {
            no_step = true;
            break;
        }
    }
    let final_grad_norm = grad.norm();
    Ok(PolishOutcome {
        pi: current,
        converged: final_grad_norm <= config.tol_grad,
        no_step,
        iterations,
        initial_cost,
        final_cost: cost_cur,
        final_grad_norm,
    })
}
