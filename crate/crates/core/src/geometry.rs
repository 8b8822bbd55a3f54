//! Symplectic geometry of the controller parameter space: the group action
//! that leaves the cost invariant, tangent and normal subspaces at a triple,
//! the Hessian as an operator (exact directional differentiation through
//! perturbed Lyapunov equations), and the strong-local-minimum test.

use nalgebra::{DMatrix, DVector};

use crate::cost::{self, gradient_from_blocks, Horizon};
use crate::error::{Error, Result};
use crate::lyapunov;
use crate::model::{assemble_closed_loop, block_n, derive_ac, ClosedLoopProblem, SynthesisProblem};
use crate::param::{ControllerTriple, GradientTriple, UDims};
use crate::structure::{antisymmetrize, is_symplectic, symmetrize, ItoCcrStructure};
use crate::tol;

/// Which side of the orthogonal split a basis spans.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisKind {
    Tangent,
    Normal,
}

/// An orthonormal list of parameter-space directions.
#[derive(Debug, Clone)]
pub struct SubspaceBasis {
    pub vectors: Vec<GradientTriple>,
    pub kind: BasisKind,
    pub rank_tol: f64,
}

impl SubspaceBasis {
    pub fn dim(&self) -> usize {
        self.vectors.len()
    }

    /// Coordinates of `u` against this basis.
    pub fn coefficients(&self, u: &GradientTriple) -> DVector<f64> {
        DVector::from_iterator(self.vectors.len(), self.vectors.iter().map(|v| v.dot(u)))
    }

    /// Linear combination of the basis vectors with the given coefficients.
    pub fn combine(&self, coeffs: &DVector<f64>) -> GradientTriple {
        let d = self
            .vectors
            .first()
            .map(|v| v.dims())
            .expect("nonempty basis");
        let mut out = GradientTriple::zeros(d);
        for (v, &k) in self.vectors.iter().zip(coeffs.iter()) {
            out = out.add_scaled(v, k);
        }
        out
    }
}

/// Orthogonal projection of `u` onto the span of `basis`.
pub fn project(u: &GradientTriple, basis: &SubspaceBasis) -> GradientTriple {
    let mut out = GradientTriple::zeros(u.dims());
    for v in &basis.vectors {
        out = out.add_scaled(v, v.dot(u));
    }
    out
}

/// Applies the symplectic similarity transformation
/// `(R2, b, e) -> (sigma⁻ᵀ R2 sigma⁻¹, sigma b, sigma e)`.
pub fn symplectic_transform(
    pi: &ControllerTriple,
    sigma: &DMatrix<f64>,
    s: &ItoCcrStructure,
) -> Result<ControllerTriple> {
    if !is_symplectic(sigma, &s.theta2, tol::STRUCT_REL)? {
        return Err(Error::Structure(
            "transformation matrix does not preserve the controller CCR form".into(),
        ));
    }
    let inv = sigma
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Structure("symplectic matrix is numerically singular".into()))?;
    let energy = inv.transpose() * &pi.energy * &inv;
    ControllerTriple::new(
        energy,
        sigma * &pi.noise_gain,
        sigma * &pi.feedback_gain,
        pi.feedthrough.clone(),
    )
}

/// Image of a Hamiltonian generator `g` (in `Theta2 · Sym`) under the
/// linearized group action at `pi`.
fn tangent_generator_image(pi: &ControllerTriple, g: &DMatrix<f64>) -> GradientTriple {
    let r2g = &pi.energy * g;
    GradientTriple {
        energy: -(&r2g + r2g.transpose()),
        noise_gain: g * &pi.noise_gain,
        feedback_gain: g * &pi.feedback_gain,
    }
}

/// Orthonormal basis (left singular vectors above the rank cut) for the span
/// of the given coordinate columns.
fn orthonormal_span(
    d: UDims,
    columns: &[DVector<f64>],
    rank_tol: f64,
) -> Result<Vec<GradientTriple>> {
    if columns.is_empty() {
        return Ok(Vec::new());
    }
    let rows = d.total();
    let mat = DMatrix::from_fn(rows, columns.len(), |i, j| columns[j][i]);
    let svd = mat.svd(true, false);
    let u = svd
        .u
        .as_ref()
        .ok_or_else(|| Error::Numeric("SVD did not return U".into()))?;
    let smax = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    let mut out = Vec::new();
    for (k, &sv) in svd.singular_values.iter().enumerate() {
        if smax > 0.0 && sv > rank_tol * smax {
            out.push(GradientTriple::from_coords(d, &u.column(k).into_owned())?);
        }
    }
    Ok(out)
}

/// Orthonormal basis of the tangent subspace at `pi`: the rank-revealed span
/// of the generator images over a basis of `Theta2 · Sym`.
pub fn tangent_basis(pi: &ControllerTriple, s: &ItoCcrStructure) -> Result<SubspaceBasis> {
    let d = pi.dims();
    let n = d.n;
    let mut columns = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        for j in i..n {
            let mut sym = DMatrix::zeros(n, n);
            sym[(i, j)] = 1.0;
            sym[(j, i)] = 1.0;
            let g = &s.theta2 * sym;
            columns.push(tangent_generator_image(pi, &g).to_coords());
        }
    }
    let vectors = orthonormal_span(d, &columns, tol::RANK_REL)?;
    Ok(SubspaceBasis {
        vectors,
        kind: BasisKind::Tangent,
        rank_tol: tol::RANK_REL,
    })
}

/// Orthonormal basis of the orthogonal complement of the tangent subspace.
pub fn normal_basis(pi: &ControllerTriple, s: &ItoCcrStructure) -> Result<SubspaceBasis> {
    let tangent = tangent_basis(pi, s)?;
    normal_from_tangent(pi, &tangent)
}

fn normal_from_tangent(pi: &ControllerTriple, tangent: &SubspaceBasis) -> Result<SubspaceBasis> {
    let d = pi.dims();
    let expected = d.total() - tangent.dim();
    let mut columns = Vec::with_capacity(d.total());
    for u in GradientTriple::canonical_basis(d) {
        let mut res = u.clone();
        // two projection sweeps keep the residual orthogonal to working precision
        for _ in 0..2 {
            let proj = project(&res, tangent);
            res = res.add_scaled(&proj, -1.0);
        }
        columns.push(res.to_coords());
    }
    let vectors = orthonormal_span(d, &columns, tol::RANK_REL)?;
    if vectors.len() != expected {
        return Err(Error::Numeric(format!(
            "normal complement has dimension {} but {} was expected",
            vectors.len(),
            expected
        )));
    }
    Ok(SubspaceBasis {
        vectors,
        kind: BasisKind::Normal,
        rank_tol: tol::RANK_REL,
    })
}

/// Residual of the explicit normal-subspace characterization
/// `2 R2 ρ - β bᵀ - ε eᵀ ∈ Theta2⁻¹ · Antisym`, evaluated as
/// `‖S(Theta2ᵀ (2 R2 ρ - β bᵀ - ε eᵀ))‖_F`.
pub fn normal_membership_residual(
    u: &GradientTriple,
    pi: &ControllerTriple,
    s: &ItoCcrStructure,
) -> Result<f64> {
    let core = &pi.energy * &u.energy * 2.0
        - &u.noise_gain * pi.noise_gain.transpose()
        - &u.feedback_gain * pi.feedback_gain.transpose();
    Ok(symmetrize(&(s.theta2.transpose() * core))?.norm())
}

/// Precomputed closed-loop data for repeated Hessian-vector products at a
/// fixed `(pi, horizon)` point.
pub struct HessianContext<'a> {
    problem: &'a SynthesisProblem,
    pi: &'a ControllerTriple,
    cl: ClosedLoopProblem,
    /// Dynamics entering the perturbed Lyapunov solves: the closed-loop
    /// matrix itself at infinite horizon, its shifted version otherwise.
    dynamics: DMatrix<f64>,
    p_mat: DMatrix<f64>,
    q_mat: DMatrix<f64>,
    gamma_mat: DMatrix<f64>,
    t2_inv: DMatrix<f64>,
    ctrl_output: DMatrix<f64>,
}

impl<'a> HessianContext<'a> {
    /// Context for the discounted cost at horizon `t`.
    pub fn new(problem: &'a SynthesisProblem, pi: &'a ControllerTriple, t: f64) -> Result<Self> {
        Self::with_horizon(problem, pi, Horizon::Finite(t))
    }

    pub fn with_horizon(
        problem: &'a SynthesisProblem,
        pi: &'a ControllerTriple,
        horizon: Horizon,
    ) -> Result<Self> {
        let cl = assemble_closed_loop(problem, pi)?;
        let (dynamics, p_mat, q_mat, gamma_mat) = match horizon {
            Horizon::Finite(t) => {
                let g = cl.gramians_discounted(t)?;
                (g.a_shifted, g.p, g.q, g.gamma)
            }
            Horizon::Infinite => {
                let g = cl.gramians_infinite()?;
                (cl.a.clone(), g.p, g.q, g.gamma)
            }
        };
        let t2_inv = problem.s.theta2_inv()?;
        let (_, ctrl_output) = derive_ac(pi, &problem.s, &problem.j1_tilde)?;
        Ok(Self {
            problem,
            pi,
            cl,
            dynamics,
            p_mat,
            q_mat,
            gamma_mat,
            t2_inv,
            ctrl_output,
        })
    }

    pub fn dims(&self) -> UDims {
        self.pi.dims()
    }

    /// Gradient of the cost at the context point.
    pub fn gradient(&self) -> Result<GradientTriple> {
        gradient_from_blocks(
            self.problem,
            self.pi,
            &self.p_mat,
            &self.q_mat,
            &self.gamma_mat,
        )
    }

    /// Exact directional derivative of the gradient along `dir`: perturbs the
    /// closed-loop matrices linearly, solves the two perturbed Lyapunov
    /// equations, and differentiates the gradient block formulas term by term.
    pub fn apply(&self, dir: &GradientTriple) -> Result<GradientTriple> {
        let p = self.problem;
        let s = &p.s;
        let n = s.n;
        let pl = &p.plant;
        let pi = self.pi;
        let d = &pi.feedthrough;
        let (rho, beta, eps) = (&dir.energy, &dir.noise_gain, &dir.feedback_gain);

        // first-order changes of the controller maps
        let dc = -(d * &s.j2 * beta.transpose() * &self.t2_inv);
        let da_ctrl = &s.theta2 * rho * 2.0
            - (beta * &s.j2 * pi.noise_gain.transpose()
                + &pi.noise_gain * &s.j2 * beta.transpose()
                + eps * &p.j1_tilde * pi.feedback_gain.transpose()
                + &pi.feedback_gain * &p.j1_tilde * eps.transpose())
                * &self.t2_inv
                * 0.5;

        let (m1, m2) = (s.m1, s.m2);
        let r = p.r();
        let mut da = DMatrix::zeros(2 * n, 2 * n);
        da.view_mut((0, n), (n, n)).copy_from(&(&pl.e * &dc));
        da.view_mut((n, 0), (n, n)).copy_from(&(eps * &pl.c));
        da.view_mut((n, n), (n, n)).copy_from(&da_ctrl);

        let mut db = DMatrix::zeros(2 * n, m1 + m2);
        db.view_mut((n, 0), (n, m1)).copy_from(&(eps * &pl.d));
        db.view_mut((n, m1), (n, m2)).copy_from(beta);

        let mut dcc = DMatrix::zeros(r, 2 * n);
        dcc.view_mut((0, n), (r, n))
            .copy_from(&(&p.weight_output * &dc));

        // perturbed Lyapunov equations around the Gramian family
        let w_p = &da * &self.p_mat
            + &self.p_mat * da.transpose()
            + &db * self.cl.b.transpose()
            + &self.cl.b * db.transpose();
        let dp = lyapunov::solve_ale(&self.dynamics, &w_p)?;
        let w_q = da.transpose() * &self.q_mat
            + &self.q_mat * &da
            + dcc.transpose() * &self.cl.c
            + self.cl.c.transpose() * &dcc;
        let dq = lyapunov::solve_ale(&self.dynamics.transpose(), &w_q)?;
        let dgamma = &dq * &self.p_mat + &self.q_mat * &dp;

        // differentiate the gradient blocks
        let dp21 = block_n(&dp, 1, 0, n);
        let dp22 = block_n(&dp, 1, 1, n);
        let dq21 = block_n(&dq, 1, 0, n);
        let dq22 = block_n(&dq, 1, 1, n);
        let dg12 = block_n(&dgamma, 0, 1, n);
        let dg21 = block_n(&dgamma, 1, 0, n);
        let dg22 = block_n(&dgamma, 1, 1, n);
        let q22 = block_n(&self.q_mat, 1, 1, n);
        let g22 = block_n(&self.gamma_mat, 1, 1, n);
        let p22 = block_n(&self.p_mat, 1, 1, n);

        let f = &p.weight_state;
        let g_w = &p.weight_output;
        let gtg = g_w.transpose() * g_w;

        let energy = symmetrize(&(&s.theta2 * &dg22))? * (-2.0);
        let skew = antisymmetrize(&(&g22 * &self.t2_inv))?;
        let dskew = antisymmetrize(&(&dg22 * &self.t2_inv))?;
        let noise_gain = &dq21 * &pl.e * d + &dq22 * &pi.noise_gain + &q22 * beta
            - &dskew * &pi.noise_gain * &s.j2
            - &skew * beta * &s.j2
            - &self.t2_inv
                * (dg12.transpose() * &pl.e
                    + &dp21 * f.transpose() * g_w
                    + &dp22 * self.ctrl_output.transpose() * &gtg
                    + &p22 * dc.transpose() * &gtg)
                * d
                * &s.j2;
        let feedback_gain = &dg21 * pl.c.transpose()
            + &dq21 * &pl.b * pl.d.transpose()
            + &dq22 * &pi.feedback_gain
            + &q22 * eps
            - &dskew * &pi.feedback_gain * &p.j1_tilde
            - &skew * eps * &p.j1_tilde;
        Ok(GradientTriple {
            energy,
            noise_gain,
            feedback_gain,
        })
    }
}

/// Hessian-vector product of the discounted cost at `(pi, t)` along `dir`.
pub fn hessian_apply(
    p: &SynthesisProblem,
    pi: &ControllerTriple,
    t: f64,
    dir: &GradientTriple,
) -> Result<GradientTriple> {
    HessianContext::new(p, pi, t)?.apply(dir)
}

/// The Hessian restricted to the normal subspace plus full-space diagnostics.
#[derive(Debug, Clone)]
pub struct HessianReport {
    /// Dense symmetric matrix of the Hessian on the normal basis.
    pub h_normal: DMatrix<f64>,
    /// Full Hessian on the combined (tangent then normal) orthonormal basis.
    pub h_full: DMatrix<f64>,
    /// Dimension of the tangent subspace at the evaluation point.
    pub tangent_dim: usize,
    /// `max |⟨t_i, Hess(t_j)⟩|` over tangent basis pairs.
    pub tangent_kernel_residual: f64,
    /// Smallest eigenvalue of the restricted Hessian.
    pub min_eig_normal: f64,
    /// Whether the full-space Hessian is positive semi-definite up to a
    /// spectrum-relative slack of `1e-8`.
    pub psd_on_u: bool,
}

fn symmetric_min_eig(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    m.symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Builds the Hessian on the combined tangent/normal basis; both blocks come
/// from one Hessian-vector product per basis direction.
pub fn hessian_normal_matrix(
    p: &SynthesisProblem,
    pi: &ControllerTriple,
    t: f64,
) -> Result<HessianReport> {
    let ctx = HessianContext::new(p, pi, t)?;
    let tb = tangent_basis(pi, &p.s)?;
    let nb = normal_from_tangent(pi, &tb)?;
    let dt = tb.dim();
    let dn = nb.dim();
    let all: Vec<&GradientTriple> = tb.vectors.iter().chain(nb.vectors.iter()).collect();
    let images: Vec<GradientTriple> = all.iter().map(|v| ctx.apply(v)).collect::<Result<_>>()?;
    let dim = dt + dn;
    let mut h_full = DMatrix::zeros(dim, dim);
    for i in 0..dim {
        for j in 0..dim {
            h_full[(i, j)] = all[i].dot(&images[j]);
        }
    }
    h_full = (&h_full + h_full.transpose()) * 0.5;
    let h_normal = h_full.view((dt, dt), (dn, dn)).into_owned();
    let tangent_kernel_residual = h_full
        .view((0, 0), (dt, dt))
        .iter()
        .fold(0.0f64, |acc, &v| acc.max(v.abs()));
    let min_eig_normal = symmetric_min_eig(&h_normal);
    let eigs = h_full.symmetric_eigenvalues();
    let max_abs = eigs.iter().fold(0.0f64, |acc, &v| acc.max(v.abs()));
    let psd_on_u = eigs.iter().all(|&v| v >= -1e-8 * (1.0 + max_abs));
    Ok(HessianReport {
        h_normal,
        h_full,
        tangent_dim: dt,
        tangent_kernel_residual,
        min_eig_normal,
        psd_on_u,
    })
}

/// Verdicts of the strong-local-minimum test.
#[derive(Debug, Clone)]
pub struct LocalMinReport {
    /// `‖∂V_t‖ ≤ tol · (1 + |V_t|)`.
    pub stationary: bool,
    /// Full-space Hessian minimum eigenvalue is at least `-tol`.
    pub psd: bool,
    /// Restricted Hessian minimum eigenvalue is at least `+tol_pd`.
    pub normal_pd: bool,
    /// Numerical kernel of the full Hessian matches the tangent subspace in
    /// dimension and by principal angle (`<= 1e-3` rad).
    pub kernel_match: bool,
    pub grad_norm: f64,
    pub cost: f64,
    pub min_eig_normal: f64,
    pub kernel_dim: usize,
    pub tangent_dim: usize,
}

/// Largest principal angle between two subspaces spanned by orthonormal
/// column blocks of equal dimension.
fn max_principal_angle(q1: &DMatrix<f64>, q2: &DMatrix<f64>) -> f64 {
    if q1.ncols() == 0 && q2.ncols() == 0 {
        return 0.0;
    }
    let overlap = q1.transpose() * q2;
    let sv = overlap.svd(false, false).singular_values;
    let min_cos = sv
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
        .clamp(-1.0, 1.0);
    min_cos.acos()
}

/// First- and second-order local optimality test at `(pi, t)`.
pub fn check_strong_local_min(
    p: &SynthesisProblem,
    pi: &ControllerTriple,
    t: f64,
    tol: f64,
    tol_pd: f64,
) -> Result<LocalMinReport> {
    let cl = assemble_closed_loop(p, pi)?;
    let rep = cost::cost_discounted(&cl, t)?;
    let grad = cost::grad_discounted(p, pi, t)?;
    let grad_norm = grad.norm();
    let stationary = grad_norm <= tol * (1.0 + rep.value.abs());

    let h = hessian_normal_matrix(p, pi, t)?;
    let eigen = h.h_full.clone().symmetric_eigen();
    let min_eig_full = eigen
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let psd = min_eig_full >= -tol;
    let normal_pd = h.min_eig_normal >= tol_pd;

    // numerical kernel of the full Hessian vs the tangent coordinate block
    let dim = h.h_full.nrows();
    let kernel_cols: Vec<usize> = (0..dim)
        .filter(|&k| eigen.eigenvalues[k].abs() <= tol)
        .collect();
    let kernel_dim = kernel_cols.len();
    let mut kernel = DMatrix::zeros(dim, kernel_dim);
    for (j, &k) in kernel_cols.iter().enumerate() {
        kernel
            .column_mut(j)
            .copy_from(&eigen.eigenvectors.column(k));
    }
    let mut tangent_block = DMatrix::zeros(dim, h.tangent_dim);
    for j in 0..h.tangent_dim {
        tangent_block[(j, j)] = 1.0;
    }
    let kernel_match = kernel_dim == h.tangent_dim
        && (kernel_dim == 0 || max_principal_angle(&kernel, &tangent_block) <= 1e-3);

    Ok(LocalMinReport {
        stationary,
        psd,
        normal_pd,
        kernel_match,
        grad_norm,
        cost: rep.value,
        min_eig_normal: h.min_eig_normal,
        kernel_dim,
        tangent_dim: h.tangent_dim,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{random_synthesis_problem, ProblemDims};
    use crate::structure::pair_form;

    const DESK: ProblemDims = ProblemDims {
        n: 2,
        m1: 4,
        m2: 4,
        p1: 2,
        p2: 2,
        r: 2,
    };

    fn sym_from(seed: u64, n: usize, scale: f64) -> DMatrix<f64> {
        let raw = DMatrix::from_fn(n, n, |i, j| {
            (((i * 13 + j * 7 + seed as usize * 3) % 17) as f64 / 8.0 - 1.0) * scale
        });
        (&raw + raw.transpose()) * 0.5
    }

    #[test]
    fn transform_identity_is_identity() {
        let (problem, pi) = random_synthesis_problem(DESK, 2, 0.5).unwrap();
        let id = DMatrix::identity(2, 2);
        let out = symplectic_transform(&pi, &id, &problem.s).unwrap();
        assert!(out.energy.relative_eq(&pi.energy, 1e-15, 1e-15));
        assert!(out.noise_gain.relative_eq(&pi.noise_gain, 1e-15, 1e-15));
    }

    #[test]
    fn transform_rejects_non_symplectic() {
        let (problem, pi) = random_synthesis_problem(DESK, 2, 0.5).unwrap();
        let two = DMatrix::identity(2, 2) * 2.0;
        assert!(symplectic_transform(&pi, &two, &problem.s).is_err());
    }

    #[test]
    fn transform_satisfies_group_law() {
        let (problem, pi) = random_synthesis_problem(DESK, 8, 0.5).unwrap();
        let t2 = &problem.s.theta2;
        let s1 = (t2 * sym_from(1, 2, 0.4)).exp();
        let s2 = (t2 * sym_from(2, 2, 0.3)).exp();
        let one_shot = symplectic_transform(&pi, &(&s1 * &s2), &problem.s).unwrap();
        let two_step = symplectic_transform(
            &symplectic_transform(&pi, &s2, &problem.s).unwrap(),
            &s1,
            &problem.s,
        )
        .unwrap();
        let d_energy = (&one_shot.energy - &two_step.energy).norm();
        let d_noise = (&one_shot.noise_gain - &two_step.noise_gain).norm();
        let d_fb = (&one_shot.feedback_gain - &two_step.feedback_gain).norm();
        assert!(d_energy <= 1e-10 && d_noise <= 1e-10 && d_fb <= 1e-10);
    }

    #[test]
    fn bases_are_orthonormal_and_complete() {
        let (problem, pi) = random_synthesis_problem(DESK, 5, 0.7).unwrap();
        let tb = tangent_basis(&pi, &problem.s).unwrap();
        let nb = normal_basis(&pi, &problem.s).unwrap();
        // generic triple at n = 2: tangent rank equals dim Sym(2) = 3
        assert_eq!(tb.dim(), 3);
        assert_eq!(tb.dim() + nb.dim(), pi.dims().total());
        for (i, u) in tb.vectors.iter().chain(nb.vectors.iter()).enumerate() {
            for (j, w) in tb.vectors.iter().chain(nb.vectors.iter()).enumerate() {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((u.dot(w) - expect).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn trivial_triple_has_trivial_tangent_space() {
        let (problem, pi) = random_synthesis_problem(DESK, 5, 0.7).unwrap();
        let zero = problem
            .controller(
                DMatrix::zeros(2, 2),
                DMatrix::zeros(2, 4),
                DMatrix::zeros(2, 2),
            )
            .unwrap();
        let tb = tangent_basis(&zero, &problem.s).unwrap();
        assert_eq!(tb.dim(), 0);
        let nb = normal_basis(&zero, &problem.s).unwrap();
        assert_eq!(nb.dim(), pi.dims().total());
    }

    #[test]
    fn normal_basis_satisfies_explicit_characterization() {
        let (problem, pi) = random_synthesis_problem(DESK, 6, 0.8).unwrap();
        let nb = normal_basis(&pi, &problem.s).unwrap();
        for v in &nb.vectors {
            let res = normal_membership_residual(v, &pi, &problem.s).unwrap();
            assert!(res <= 1e-10, "membership residual {res:.3e}");
        }
        // and tangent vectors generically violate it
        let tb = tangent_basis(&pi, &problem.s).unwrap();
        let worst = tb
            .vectors
            .iter()
            .map(|v| normal_membership_residual(v, &pi, &problem.s).unwrap())
            .fold(0.0f64, f64::max);
        assert!(worst > 1e-6);
    }

    #[test]
    fn hessian_of_zero_direction_is_zero() {
        let (problem, pi) = random_synthesis_problem(DESK, 4, 0.5).unwrap();
        let zero = GradientTriple::zeros(pi.dims());
        let out = hessian_apply(&problem, &pi, 0.1, &zero).unwrap();
        assert!(out.norm() <= 1e-14);
    }

    #[test]
    fn hessian_is_self_adjoint() {
        let (problem, pi) = random_synthesis_problem(DESK, 10, 0.6).unwrap();
        let cl = assemble_closed_loop(&problem, &pi).unwrap();
        let cap = lyapunov::max_admissible_t(&cl.a);
        let t = if cap.is_finite() { cap / 3.0 } else { 0.5 };
        let ctx = HessianContext::new(&problem, &pi, t).unwrap();
        let basis = GradientTriple::canonical_basis(pi.dims());
        for (i, u) in basis.iter().enumerate().step_by(3) {
            for (j, w) in basis.iter().enumerate().step_by(4) {
                if i == j {
                    continue;
                }
                let lhs = u.dot(&ctx.apply(w).unwrap());
                let rhs = w.dot(&ctx.apply(u).unwrap());
                assert!(
                    (lhs - rhs).abs() <= 1e-8 * (1.0 + lhs.abs().max(rhs.abs())),
                    "asymmetry at ({i},{j}): {lhs} vs {rhs}"
                );
            }
        }
    }

    #[test]
    fn hessian_report_shapes_and_symmetry() {
        let (problem, pi) = random_synthesis_problem(DESK, 13, 0.5).unwrap();
        let rep = hessian_normal_matrix(&problem, &pi, 0.05).unwrap();
        let dim_u = pi.dims().total();
        assert_eq!(rep.h_full.nrows(), dim_u);
        assert_eq!(rep.h_normal.nrows(), dim_u - rep.tangent_dim);
        assert!(
            (&rep.h_normal - rep.h_normal.transpose()).norm() <= 1e-9 * (1.0 + rep.h_normal.norm())
        );
    }

    #[test]
    fn non_stationary_points_have_nonzero_tangent_block() {
        let (problem, pi) = random_synthesis_problem(DESK, 19, 0.6).unwrap();
        let rep = hessian_normal_matrix(&problem, &pi, 0.08).unwrap();
        assert!(rep.tangent_kernel_residual > 1e-8);
    }

    #[test]
    fn trivial_triple_reports_vacuous_kernel_match() {
        let (problem, _) = random_synthesis_problem(DESK, 19, 0.6).unwrap();
        let zero = problem
            .controller(
                DMatrix::zeros(2, 2),
                DMatrix::zeros(2, 4),
                DMatrix::zeros(2, 2),
            )
            .unwrap();
        let rep = check_strong_local_min(&problem, &zero, 0.05, 1e-9, 1e-12).unwrap();
        assert_eq!(rep.tangent_dim, 0);
        // the comparison against a zero-dimensional tangent space is vacuous
        assert_eq!(rep.kernel_match, rep.kernel_dim == 0);
    }

    #[test]
    fn random_triple_is_not_stationary() {
        let (problem, pi) = random_synthesis_problem(DESK, 14, 0.5).unwrap();
        let rep = check_strong_local_min(&problem, &pi, 0.05, 1e-7, 1e-12).unwrap();
        assert!(!rep.stationary);
    }

    #[test]
    fn symplectic_generators_exponentiate_symplectically() {
        let t2 = pair_form(2).unwrap();
        for k in 0..5u64 {
            let sigma = (&t2 * sym_from(k, 2, 0.5)).exp();
            assert!(is_symplectic(&sigma, &t2, tol::STRUCT_REL).unwrap());
        }
    }
}
