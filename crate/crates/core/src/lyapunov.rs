//! Algebraic Lyapunov equation solvers, horizon admissibility, Gramians and
//! their horizon derivatives, plus an exponential-quadrature route to the
//! discounted covariance used as an independent cross-check.
//!
//! All functions here work on plain real matrices; the typed wrappers living
//! on [`crate::model::ClosedLoopProblem`] forward to them.

use nalgebra::DMatrix;

use crate::error::{ensure_dim, Error, Result};
use crate::tol;

/// Largest real part over the spectrum of `a`.
pub fn spectral_abscissa(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Largest admissible effective time horizon for `a`: `+inf` when the
/// abscissa is nonpositive, `1/(2 alpha)` otherwise.
pub fn max_admissible_t(a: &DMatrix<f64>) -> f64 {
    let alpha = spectral_abscissa(a);
    if alpha <= 0.0 {
        f64::INFINITY
    } else {
        1.0 / (2.0 * alpha)
    }
}

/// True iff the shifted matrix `a - I/(2t)` is Hurwitz with margin.
pub fn is_t_stabilizing(a: &DMatrix<f64>, t: f64) -> bool {
    t > 0.0 && spectral_abscissa(a) - 1.0 / (2.0 * t) < -tol::HURWITZ_MARGIN
}

/// The horizon-shifted dynamics `a - I/(2t)`.
pub fn shifted_dynamics(a: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    let k = a.nrows();
    a - DMatrix::<f64>::identity(k, k) / (2.0 * t)
}

fn check_hurwitz(a: &DMatrix<f64>) -> Result<()> {
    let alpha = spectral_abscissa(a);
    if alpha < -tol::HURWITZ_MARGIN {
        Ok(())
    } else {
        Err(Error::NotHurwitz { abscissa: alpha })
    }
}

fn ale_residual(a: &DMatrix<f64>, w: &DMatrix<f64>, x: &DMatrix<f64>) -> f64 {
    (a * x + x * a.transpose() + w).norm()
}

/// Kronecker-vectorized dense solve of `AX + XAᵀ + W = 0` with one step of
/// iterative refinement on the stored factorization.
pub fn solve_ale_kronecker(a: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let k = a.nrows();
    ensure_dim(a.is_square() && w.is_square() && w.nrows() == k, || {
        format!(
            "Lyapunov solve needs square A, W of equal order, got {}x{} vs {}x{}",
            a.nrows(),
            a.ncols(),
            w.nrows(),
            w.ncols()
        )
    })?;
    check_hurwitz(a)?;
    let eye = DMatrix::<f64>::identity(k, k);
    let big = eye.kronecker(a) + a.kronecker(&eye);
    let lu = big.lu();
    let rhs = nalgebra::DVector::from_column_slice((-w).as_slice());
    let mut x_vec = lu
        .solve(&rhs)
        .ok_or_else(|| Error::Numeric("Kronecker Lyapunov system is singular".into()))?;
    let mut x = DMatrix::from_column_slice(k, k, x_vec.as_slice());
    // one refinement pass
    let res = a * &x + &x * a.transpose() + w;
    if let Some(corr) = lu.solve(&nalgebra::DVector::from_column_slice((-res).as_slice())) {
        x_vec += corr;
        x = DMatrix::from_column_slice(k, k, x_vec.as_slice());
    }
    Ok((&x + x.transpose()) * 0.5)
}

/// Bartels–Stewart style solve of `AX + XAᵀ + W = 0` through the real Schur
/// form of `A`: quasi-triangular back substitution over 1x1/2x2 blocks.
pub fn solve_ale_schur(a: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let k = a.nrows();
    ensure_dim(a.is_square() && w.is_square() && w.nrows() == k, || {
        format!(
            "Lyapunov solve needs square A, W of equal order, got {}x{} vs {}x{}",
            a.nrows(),
            a.ncols(),
            w.nrows(),
            w.ncols()
        )
    })?;
    check_hurwitz(a)?;
    let (q, t) = a.clone().schur().unpack();
    let wt = q.transpose() * w * &q;

    // diagonal block boundaries of the quasi-triangular factor
    let mut blocks: Vec<(usize, usize)> = Vec::new();
    let mut i = 0;
    while i < k {
        if i + 1 < k && t[(i + 1, i)] != 0.0 {
            if i + 2 < k && t[(i + 2, i + 1)] != 0.0 {
                return Err(Error::Numeric(
                    "Schur factor has an overlapping 2x2 block chain".into(),
                ));
            }
            blocks.push((i, 2));
            i += 2;
        } else {
            blocks.push((i, 1));
            i += 1;
        }
    }

    let nb = blocks.len();
    let mut y = DMatrix::<f64>::zeros(k, k);
    // solve T Y + Y Tᵀ = -W̃ block by block, trailing blocks first
    for bi in (0..nb).rev() {
        let (ri, si) = blocks[bi];
        for bj in (0..nb).rev() {
            let (rj, sj) = blocks[bj];
            let mut rhs = -wt.view((ri, rj), (si, sj)).into_owned();
            for (rk_, sk) in blocks.iter().skip(bi + 1).copied() {
                let t_ik = t.view((ri, rk_), (si, sk));
                let y_kj = y.view((rk_, rj), (sk, sj));
                rhs -= t_ik * y_kj;
            }
            for (rl, sl) in blocks.iter().skip(bj + 1).copied() {
                let y_il = y.view((ri, rl), (si, sl));
                let t_jl = t.view((rj, rl), (sj, sl));
                rhs -= y_il * t_jl.transpose();
            }
            // small Sylvester T_ii Y_ij + Y_ij T_jjᵀ = rhs
            let t_ii = t.view((ri, ri), (si, si)).into_owned();
            let t_jj = t.view((rj, rj), (sj, sj)).into_owned();
            let e_i = DMatrix::<f64>::identity(si, si);
            let e_j = DMatrix::<f64>::identity(sj, sj);
            let small = e_j.kronecker(&t_ii) + t_jj.kronecker(&e_i);
            let rhs_vec = nalgebra::DVector::from_column_slice(rhs.as_slice());
            let sol = small
                .lu()
                .solve(&rhs_vec)
                .ok_or_else(|| Error::Numeric("singular diagonal Sylvester block".into()))?;
            y.view_mut((ri, rj), (si, sj))
                .copy_from(&DMatrix::from_column_slice(si, sj, sol.as_slice()));
        }
    }
    let x = &q * y * q.transpose();
    Ok((&x + x.transpose()) * 0.5)
}

/// Order at which the default solve switches from the Kronecker route to the
/// Schur route.
pub const KRONECKER_MAX_ORDER: usize = 40;

/// Solves `AX + XAᵀ + W = 0` for Hurwitz `A` and symmetric `W`, returning a
/// symmetric `X` whose residual satisfies
/// `‖AX + XAᵀ + W‖_F <= ALE_RESIDUAL · (1 + ‖W‖_F)`.
///
/// Dispatches to the Kronecker solve at desk scale and to the Schur route for
/// larger orders; falls back to the other route when the residual check fails.
pub fn solve_ale(a: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    type Solver = fn(&DMatrix<f64>, &DMatrix<f64>) -> Result<DMatrix<f64>>;
    let bound = tol::ALE_RESIDUAL * (1.0 + w.norm());
    let (first, second): (Solver, Solver) = if a.nrows() <= KRONECKER_MAX_ORDER {
        (solve_ale_kronecker, solve_ale_schur)
    } else {
        (solve_ale_schur, solve_ale_kronecker)
    };
    let x = first(a, w)?;
    if ale_residual(a, w, &x) <= bound {
        return Ok(x);
    }
    let y = second(a, w)?;
    let (rx, ry) = (ale_residual(a, w, &x), ale_residual(a, w, &y));
    let best = if ry < rx { y } else { x };
    if ale_residual(a, w, &best) <= bound {
        Ok(best)
    } else {
        Err(Error::Numeric(format!(
            "Lyapunov residual {:.3e} exceeds bound {:.3e}",
            ale_residual(a, w, &best),
            bound
        )))
    }
}

/// Infinite-horizon controllability/observability Gramians and the Hankelian
/// `Gamma = Q P`.
#[derive(Debug, Clone)]
pub struct GramianSet {
    pub p: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
}

/// Gramians of a stable realization `(a, b, c)`:
/// `a P + P aᵀ + b bᵀ = 0`, `aᵀ Q + Q a + cᵀ c = 0`, `Gamma = Q P`.
pub fn gramians_infinite_raw(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
) -> Result<GramianSet> {
    let p = solve_ale(a, &(b * b.transpose()))?;
    let q = solve_ale(&a.transpose(), &(c.transpose() * c))?;
    let gamma = &q * &p;
    Ok(GramianSet { p, q, gamma })
}

/// Discounted Gramians at horizon `t`, together with their derivatives in `t`.
#[derive(Debug, Clone)]
pub struct DiscountedGramianSet {
    /// Effective time horizon the set was computed at.
    pub t: f64,
    /// Shifted dynamics `a - I/(2t)` (Hurwitz by admissibility).
    pub a_shifted: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
    pub dp: DMatrix<f64>,
    pub dq: DMatrix<f64>,
    pub dgamma: DMatrix<f64>,
}

/// Discounted Gramians of `(a, b, c)` with initial covariance `sigma`:
///
/// ```text
/// a_t P + P a_tᵀ + sigma/t + b bᵀ = 0        a_t = a - I/(2t)
/// a_tᵀ Q + Q a_t + cᵀ c = 0                  Gamma = Q P
/// a_t P' + P' a_tᵀ + (P - sigma)/t² = 0
/// a_tᵀ Q' + Q' a_t + Q/t² = 0                Gamma' = Q' P + Q P'
/// ```
pub fn gramians_discounted_raw(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
    t: f64,
) -> Result<DiscountedGramianSet> {
    if !is_t_stabilizing(a, t) {
        return Err(Error::HorizonTooLarge {
            t,
            t_max: max_admissible_t(a),
        });
    }
    let a_shifted = shifted_dynamics(a, t);
    let p = solve_ale(&a_shifted, &(sigma / t + b * b.transpose()))?;
    let q = solve_ale(&a_shifted.transpose(), &(c.transpose() * c))?;
    let gamma = &q * &p;
    let dp = solve_ale(&a_shifted, &((&p - sigma) / (t * t)))?;
    let dq = solve_ale(&a_shifted.transpose(), &(&q / (t * t)))?;
    let dgamma = &dq * &p + &q * &dp;
    Ok(DiscountedGramianSet {
        t,
        a_shifted,
        p,
        q,
        gamma,
        dp,
        dq,
        dgamma,
    })
}

/// `∫₀ᵗ e^{τa} W e^{τaᵀ} dτ` through one block matrix exponential.
fn noise_integral(a: &DMatrix<f64>, w: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    let k = a.nrows();
    let mut h = DMatrix::<f64>::zeros(2 * k, 2 * k);
    h.view_mut((0, 0), (k, k)).copy_from(a);
    h.view_mut((0, k), (k, k)).copy_from(w);
    h.view_mut((k, k), (k, k)).copy_from(&(-a.transpose()));
    let e = (h * t).exp();
    let phi = e.view((0, 0), (k, k)).into_owned();
    let g = e.view((0, k), (k, k)).into_owned();
    g * phi.transpose()
}

/// Transient covariance `Xi(t) = e^{ta} sigma e^{taᵀ} + ∫₀ᵗ e^{τa} b bᵀ e^{τaᵀ} dτ`,
/// evaluated by matrix exponentials.
pub fn covariance_at(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
    t: f64,
) -> Result<DMatrix<f64>> {
    if t < 0.0 {
        return Err(Error::Precondition(format!(
            "covariance time must be nonnegative, got {t}"
        )));
    }
    let phi = (a * t).exp();
    let xi = &phi * sigma * phi.transpose() + noise_integral(a, &(b * b.transpose()), t);
    Ok((&xi + xi.transpose()) * 0.5)
}

/// Exponentially weighted time average `(1/T) ∫ e^{-t/T} Xi(t) dt` by
/// composite Simpson quadrature over `[0, t_max]`; an algebra-free route to
/// the discounted covariance used for cross-checking the Lyapunov solve.
pub fn discounted_average_quadrature(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
    horizon: f64,
    t_max: f64,
    steps: usize,
) -> Result<DMatrix<f64>> {
    if horizon <= 0.0 {
        return Err(Error::Precondition(format!(
            "horizon must be positive, got {horizon}"
        )));
    }
    if t_max < 20.0 * horizon {
        return Err(Error::Precondition(format!(
            "quadrature span {t_max} is shorter than 20 horizons ({})",
            20.0 * horizon
        )));
    }
    let steps = if steps.is_multiple_of(2) {
        steps
    } else {
        steps + 1
    }
    .max(2);
    let h = t_max / steps as f64;
    let w = b * b.transpose();
    let phi = (a * h).exp();
    let wh = noise_integral(a, &w, h);

    // exact one-step covariance recursion on the grid
    let mut xi = sigma.clone();
    let k = a.nrows();
    let mut acc = DMatrix::<f64>::zeros(k, k);
    for j in 0..=steps {
        let t_j = j as f64 * h;
        let simpson = if j == 0 || j == steps {
            1.0
        } else if !j.is_multiple_of(2) {
            4.0
        } else {
            2.0
        };
        acc += &xi * (simpson * (-t_j / horizon).exp());
        if j < steps {
            xi = &phi * xi * phi.transpose() + &wh;
        }
    }
    let integral = acc * (h / 3.0);
    Ok(integral / horizon)
}
