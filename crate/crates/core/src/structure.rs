//! Ito/CCR structure matrices and the structural predicates built on them.
//!
//! Everything downstream works with real matrices only: the Ito matrix
//! `I + iJ` is represented by its imaginary part `J`, and Hermitian
//! positivity checks go through the doubled real embedding.

use nalgebra::DMatrix;

use crate::error::{ensure_dim, Error, Result};
use crate::tol;

/// The 2×2 generator of antisymmetric matrices, `[[0, 1], [-1, 0]]`.
pub fn pair_block() -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0])
}

/// Direct sum of `order/2` copies of [`pair_block`]; the canonical
/// antisymmetric orthogonal matrix pairing adjacent coordinates (2k-1, 2k).
pub fn pair_form(order: usize) -> Result<DMatrix<f64>> {
    ensure_dim(order >= 2 && order.is_multiple_of(2), || {
        format!("canonical pair form needs an even order >= 2, got {order}")
    })?;
    let mut m = DMatrix::zeros(order, order);
    for k in 0..order / 2 {
        m[(2 * k, 2 * k + 1)] = 1.0;
        m[(2 * k + 1, 2 * k)] = -1.0;
    }
    Ok(m)
}

/// Block-diagonal concatenation of two square matrices.
pub fn block_diag(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (na, nb) = (a.nrows(), b.nrows());
    let mut m = DMatrix::zeros(na + nb, na + nb);
    m.view_mut((0, 0), (na, na)).copy_from(a);
    m.view_mut((na, na), (nb, nb)).copy_from(b);
    m
}

/// Ito matrices of the two external field channels: `(J1, J2, J)` with
/// `J = diag(J1, J2)` and each factor satisfying `Jk² = -I`.
pub fn build_ito(m1: usize, m2: usize) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let j1 = pair_form(m1)?;
    let j2 = pair_form(m2)?;
    let j = block_diag(&j1, &j2);
    Ok((j1, j2, j))
}

/// Canonical CCR matrices of the plant and controller variables:
/// `(Theta1, Theta2, Theta)` with `Theta = diag(Theta1, Theta2)`, each factor
/// antisymmetric with unit determinant magnitude.
pub fn canonical_ccr(n: usize) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let t1 = pair_form(n)?;
    let t2 = t1.clone();
    let t = block_diag(&t1, &t2);
    Ok((t1, t2, t))
}

/// Symmetric part `(N + Nᵀ)/2`.
pub fn symmetrize(n: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    ensure_dim(n.is_square(), || {
        format!(
            "symmetrize needs a square matrix, got {}x{}",
            n.nrows(),
            n.ncols()
        )
    })?;
    Ok((n + n.transpose()) * 0.5)
}

/// Antisymmetric part `(N - Nᵀ)/2`.
pub fn antisymmetrize(n: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    ensure_dim(n.is_square(), || {
        format!(
            "antisymmetrize needs a square matrix, got {}x{}",
            n.nrows(),
            n.ncols()
        )
    })?;
    Ok((n - n.transpose()) * 0.5)
}

/// True iff `sigma Theta2 sigmaᵀ = Theta2` to relative Frobenius tolerance.
pub fn is_symplectic(sigma: &DMatrix<f64>, theta2: &DMatrix<f64>, tol: f64) -> Result<bool> {
    ensure_dim(
        sigma.is_square() && sigma.nrows() == theta2.nrows() && theta2.is_square(),
        || {
            format!(
                "symplectic check needs matching square matrices, got {}x{} vs {}x{}",
                sigma.nrows(),
                sigma.ncols(),
                theta2.nrows(),
                theta2.ncols()
            )
        },
    )?;
    let residual = sigma * theta2 * sigma.transpose() - theta2;
    Ok(residual.norm() <= tol * theta2.norm())
}

/// True iff the Hermitian matrix `P + iTheta` is positive semi-definite up to
/// `-tol` on its spectrum, evaluated through the real embedding
/// `[[P, -Theta], [Theta, P]]`.
pub fn quantum_psd_check(p: &DMatrix<f64>, theta: &DMatrix<f64>, tol: f64) -> Result<bool> {
    let k = p.nrows();
    ensure_dim(
        p.is_square() && theta.is_square() && theta.nrows() == k,
        || {
            format!(
                "quantum positivity check needs equal orders, got {} vs {}",
                k,
                theta.nrows()
            )
        },
    )?;
    if (p - p.transpose()).norm() > tol::STRUCT_REL * (1.0 + p.norm()) {
        return Err(Error::Structure(
            "quantum positivity check needs a symmetric P".into(),
        ));
    }
    let mut embed = DMatrix::zeros(2 * k, 2 * k);
    embed.view_mut((0, 0), (k, k)).copy_from(p);
    embed.view_mut((k, k), (k, k)).copy_from(p);
    embed.view_mut((0, k), (k, k)).copy_from(&(-theta));
    embed.view_mut((k, 0), (k, k)).copy_from(theta);
    let eigs = embed.symmetric_eigenvalues();
    Ok(eigs.iter().all(|&e| e >= -tol))
}

/// Dimensions and canonical structure matrices fixing the quantum skeleton of
/// a plant/controller pair: Ito matrices of the external fields and CCR
/// matrices of the internal variables.
#[derive(Debug, Clone)]
pub struct ItoCcrStructure {
    /// Number of plant external field channels (even).
    pub m1: usize,
    /// Number of controller external field channels (even).
    pub m2: usize,
    /// Number of plant output field channels (even, `p1 <= m1`).
    pub p1: usize,
    /// Number of controller output field channels (even, `p2 <= m2`).
    pub p2: usize,
    /// Number of plant variables = number of controller variables (even).
    pub n: usize,
    pub j1: DMatrix<f64>,
    pub j2: DMatrix<f64>,
    /// `diag(j1, j2)`, order `m1 + m2`.
    pub j: DMatrix<f64>,
    pub theta1: DMatrix<f64>,
    pub theta2: DMatrix<f64>,
    /// `diag(theta1, theta2)`, order `2n`.
    pub theta: DMatrix<f64>,
}

impl ItoCcrStructure {
    /// Canonical structure: Ito parts and CCR matrices all in pair-block form.
    pub fn canonical(n: usize, m1: usize, m2: usize, p1: usize, p2: usize) -> Result<Self> {
        let (t1, t2, _) = canonical_ccr(n)?;
        Self::with_ccr(n, m1, m2, p1, p2, t1, t2)
    }

    /// Structure with caller-supplied CCR matrices; they must be antisymmetric
    /// and nonsingular.
    pub fn with_ccr(
        n: usize,
        m1: usize,
        m2: usize,
        p1: usize,
        p2: usize,
        theta1: DMatrix<f64>,
        theta2: DMatrix<f64>,
    ) -> Result<Self> {
        for (name, v) in [("n", n), ("m1", m1), ("m2", m2), ("p1", p1), ("p2", p2)] {
            ensure_dim(v >= 2 && v.is_multiple_of(2), || {
                format!("dimension {name}={v} must be even and >= 2")
            })?;
        }
        ensure_dim(p1 <= m1, || format!("p1={p1} must not exceed m1={m1}"))?;
        ensure_dim(p2 <= m2, || format!("p2={p2} must not exceed m2={m2}"))?;
        let (j1, j2, j) = build_ito(m1, m2)?;
        for (name, t) in [("Theta1", &theta1), ("Theta2", &theta2)] {
            ensure_dim(t.is_square() && t.nrows() == n, || {
                format!("{name} must be {n}x{n}, got {}x{}", t.nrows(), t.ncols())
            })?;
            if (t + t.transpose()).norm() > tol::STRUCT_REL * (1.0 + t.norm()) {
                return Err(Error::Structure(format!("{name} must be antisymmetric")));
            }
            let det = t.clone().lu().determinant();
            if det.abs() < 1e-12 {
                return Err(Error::Structure(format!(
                    "{name} must be nonsingular, det={det:e}"
                )));
            }
        }
        let theta = block_diag(&theta1, &theta2);
        Ok(Self {
            m1,
            m2,
            p1,
            p2,
            n,
            j1,
            j2,
            j,
            theta1,
            theta2,
            theta,
        })
    }

    /// Total number of external field channels `m1 + m2`.
    pub fn field_channels(&self) -> usize {
        self.m1 + self.m2
    }

    /// Inverse of the controller CCR matrix, used throughout the gradient and
    /// parameterization formulas.
    pub fn theta2_inv(&self) -> Result<DMatrix<f64>> {
        self.theta2
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Structure("Theta2 is singular".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn frob(m: &DMatrix<f64>) -> f64 {
        m.norm()
    }

    #[test]
    fn ito_2_2_is_pair_block() {
        let (j1, _, j) = build_ito(2, 2).unwrap();
        assert_eq!(j1, pair_block());
        assert_eq!(j.nrows(), 4);
    }

    #[test]
    fn ito_squares_to_minus_identity() {
        for (m1, m2) in [(2, 2), (4, 2), (4, 4), (6, 4)] {
            let (j1, j2, j) = build_ito(m1, m2).unwrap();
            assert!(frob(&(&j1 * &j1 + DMatrix::identity(m1, m1))) <= 1e-14);
            assert!(frob(&(&j2 * &j2 + DMatrix::identity(m2, m2))) <= 1e-14);
            assert!(frob(&(&j * &j + DMatrix::identity(m1 + m2, m1 + m2))) <= 1e-14);
            assert!(frob(&(&j + j.transpose())) <= 1e-14);
        }
    }

    #[test]
    fn ito_rejects_odd_or_small_dims() {
        assert!(build_ito(3, 2).is_err());
        assert!(build_ito(2, 0).is_err());
    }

    #[test]
    fn ccr_canonical_values() {
        let (t1, _, t) = canonical_ccr(2).unwrap();
        assert_eq!(t1, pair_block());
        let (t1, _, _) = canonical_ccr(4).unwrap();
        // two pair blocks down the diagonal
        assert_eq!(t1[(0, 1)], 1.0);
        assert_eq!(t1[(2, 3)], 1.0);
        assert_eq!(t1[(0, 3)], 0.0);
        let det = t.clone().lu().determinant();
        assert!((det.abs() - 1.0).abs() <= 1e-12);
        assert!(frob(&(&t + t.transpose())) <= 1e-14);
        assert!(canonical_ccr(3).is_err());
    }

    #[test]
    fn symmetrizer_values() {
        let n = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let s = symmetrize(&n).unwrap();
        assert_eq!(s, DMatrix::from_row_slice(2, 2, &[0.0, 0.5, 0.5, 0.0]));
        let sym = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 3.0]);
        assert!(frob(&antisymmetrize(&sym).unwrap()) == 0.0);
        assert!(symmetrize(&DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn symplectic_identity_and_scaling() {
        let t2 = pair_block();
        let id = DMatrix::identity(2, 2);
        assert!(is_symplectic(&id, &t2, tol::STRUCT_REL).unwrap());
        let two = &id * 2.0;
        assert!(!is_symplectic(&two, &t2, tol::STRUCT_REL).unwrap());
        // residual of 2I is exactly 3‖Theta2‖
        let res = &two * &t2 * two.transpose() - &t2;
        assert!((res.norm() - 3.0 * t2.norm()).abs() <= 1e-14);
    }

    #[test]
    fn symplectic_exponential_of_hamiltonian_generator() {
        let t2 = pair_form(4).unwrap();
        let s = DMatrix::from_row_slice(
            4,
            4,
            &[
                0.3, -0.1, 0.2, 0.0, //
                -0.1, 0.5, 0.1, -0.2, //
                0.2, 0.1, -0.4, 0.3, //
                0.0, -0.2, 0.3, 0.1,
            ],
        );
        let sigma = (&t2 * &s).exp();
        assert!(is_symplectic(&sigma, &t2, tol::STRUCT_REL).unwrap());
    }

    #[test]
    fn quantum_psd_examples() {
        let theta = pair_block();
        let id = DMatrix::identity(2, 2);
        assert!(quantum_psd_check(&id, &theta, 1e-12).unwrap());
        let half = &id * 0.5;
        assert!(!quantum_psd_check(&half, &theta, 1e-12).unwrap());
        // asymmetric P is rejected
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        assert!(quantum_psd_check(&bad, &theta, 1e-12).is_err());
    }

    #[test]
    fn quantum_psd_implies_classical_psd() {
        // random symmetric P accepted by the quantum check must be PSD itself
        let theta = pair_form(4).unwrap();
        let mut accepted = 0;
        for k in 0..40 {
            let raw = DMatrix::from_fn(4, 4, |i, j| ((i * 7 + j * 3 + k) % 11) as f64 / 5.0 - 1.0);
            let p = (&raw + raw.transpose()) * 0.5 + DMatrix::identity(4, 4) * (k as f64 * 0.1);
            if quantum_psd_check(&p, &theta, 1e-12).unwrap() {
                accepted += 1;
                let min_eig = p
                    .symmetric_eigenvalues()
                    .iter()
                    .cloned()
                    .fold(f64::INFINITY, f64::min);
                assert!(min_eig >= -1e-10);
            }
        }
        assert!(accepted > 0);
    }

    proptest! {
        #[test]
        fn split_reassembles_and_parts_are_orthogonal(entries in proptest::collection::vec(-10.0f64..10.0, 25)) {
            let n = DMatrix::from_row_slice(5, 5, &entries);
            let m = DMatrix::from_fn(5, 5, |i, j| entries[(j * 5 + i + 7) % 25]);
            let s = symmetrize(&n).unwrap();
            let a = antisymmetrize(&n).unwrap();
            prop_assert!((&s + &a - &n).norm() <= 1e-12 * (1.0 + n.norm()));
            // idempotence on their ranges
            prop_assert!((symmetrize(&s).unwrap() - &s).norm() <= 1e-14 * (1.0 + s.norm()));
            prop_assert!((antisymmetrize(&a).unwrap() - &a).norm() <= 1e-14 * (1.0 + a.norm()));
            // mutual annihilation under the Frobenius inner product
            let am = antisymmetrize(&m).unwrap();
            let ip = s.dot(&am);
            prop_assert!(ip.abs() <= 1e-11 * (1.0 + s.norm() * am.norm()));
        }
    }
}
