//! Controller parameter space: the free triple `(R2, b, e)` of a coherent
//! controller, directions in that space, and an isometric coordinate
//! embedding used by the subspace and Hessian machinery.
//!
//! The space carries the direct-sum Frobenius inner product; the energy slot
//! ranges over symmetric matrices only, so its coordinates pack the diagonal
//! plus the scaled upper triangle.

use nalgebra::{DMatrix, DVector};

use crate::error::{ensure_dim, Error, Result};
use crate::structure::symmetrize;
use crate::tol;

/// Shape of the controller parameter space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UDims {
    /// Controller state dimension.
    pub n: usize,
    /// Controller external field channels.
    pub m2: usize,
    /// Plant output field channels.
    pub p1: usize,
}

impl UDims {
    /// Dimension of the parameter space: `n(n+1)/2 + n·m2 + n·p1`.
    pub fn total(&self) -> usize {
        self.n * (self.n + 1) / 2 + self.n * self.m2 + self.n * self.p1
    }
}

/// The free parameters of a coherent controller: energy matrix, gain with
/// respect to the controller's own input noise, gain with respect to the
/// plant output field, plus the fixed output feedthrough.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerTriple {
    /// Symmetric energy matrix (`n x n`).
    pub energy: DMatrix<f64>,
    /// Gain applied to the controller input noise (`n x m2`).
    pub noise_gain: DMatrix<f64>,
    /// Gain applied to the incoming plant output field (`n x p1`).
    pub feedback_gain: DMatrix<f64>,
    /// Fixed output feedthrough (`p2 x m2`, rows of a permutation matrix).
    pub feedthrough: DMatrix<f64>,
}

impl ControllerTriple {
    pub fn new(
        energy: DMatrix<f64>,
        noise_gain: DMatrix<f64>,
        feedback_gain: DMatrix<f64>,
        feedthrough: DMatrix<f64>,
    ) -> Result<Self> {
        let n = energy.nrows();
        ensure_dim(energy.is_square(), || {
            format!(
                "energy matrix must be square, got {}x{}",
                energy.nrows(),
                energy.ncols()
            )
        })?;
        ensure_dim(
            noise_gain.nrows() == n && feedback_gain.nrows() == n,
            || "gain matrices must have as many rows as the energy matrix".into(),
        )?;
        if (&energy - energy.transpose()).norm() > tol::STRUCT_REL * (1.0 + energy.norm()) {
            return Err(Error::Structure(
                "controller energy matrix must be symmetric".into(),
            ));
        }
        let p2 = feedthrough.nrows();
        ensure_dim(feedthrough.ncols() == noise_gain.ncols(), || {
            "feedthrough column count must match the noise gain".into()
        })?;
        let ddt = &feedthrough * feedthrough.transpose();
        if (&ddt - DMatrix::<f64>::identity(p2, p2)).norm() > tol::STRUCT_REL {
            return Err(Error::Structure(
                "controller feedthrough must satisfy d dᵀ = I".into(),
            ));
        }
        let energy = symmetrize(&energy)?;
        Ok(Self {
            energy,
            noise_gain,
            feedback_gain,
            feedthrough,
        })
    }

    pub fn dims(&self) -> UDims {
        UDims {
            n: self.energy.nrows(),
            m2: self.noise_gain.ncols(),
            p1: self.feedback_gain.ncols(),
        }
    }

    /// The triple moved along `dir` by `step`; the energy slot stays exactly
    /// symmetric, the feedthrough is carried over unchanged.
    pub fn offset(&self, dir: &GradientTriple, step: f64) -> Self {
        let energy = &self.energy + &dir.energy * step;
        Self {
            energy: (&energy + energy.transpose()) * 0.5,
            noise_gain: &self.noise_gain + &dir.noise_gain * step,
            feedback_gain: &self.feedback_gain + &dir.feedback_gain * step,
            feedthrough: self.feedthrough.clone(),
        }
    }
}

/// An element of the controller parameter space: a gradient, a Hessian image,
/// or a search direction. The energy slot is symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientTriple {
    pub energy: DMatrix<f64>,
    pub noise_gain: DMatrix<f64>,
    pub feedback_gain: DMatrix<f64>,
}

impl GradientTriple {
    pub fn zeros(d: UDims) -> Self {
        Self {
            energy: DMatrix::zeros(d.n, d.n),
            noise_gain: DMatrix::zeros(d.n, d.m2),
            feedback_gain: DMatrix::zeros(d.n, d.p1),
        }
    }

    pub fn dims(&self) -> UDims {
        UDims {
            n: self.energy.nrows(),
            m2: self.noise_gain.ncols(),
            p1: self.feedback_gain.ncols(),
        }
    }

    /// Direct-sum Frobenius inner product.
    pub fn dot(&self, other: &Self) -> f64 {
        self.energy.dot(&other.energy)
            + self.noise_gain.dot(&other.noise_gain)
            + self.feedback_gain.dot(&other.feedback_gain)
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            energy: &self.energy * k,
            noise_gain: &self.noise_gain * k,
            feedback_gain: &self.feedback_gain * k,
        }
    }

    /// `self + k · other`.
    pub fn add_scaled(&self, other: &Self, k: f64) -> Self {
        Self {
            energy: &self.energy + &other.energy * k,
            noise_gain: &self.noise_gain + &other.noise_gain * k,
            feedback_gain: &self.feedback_gain + &other.feedback_gain * k,
        }
    }

    /// Coordinates in the canonical orthonormal basis of the parameter space.
    /// Off-diagonal energy entries are packed once with weight sqrt(2) so the
    /// Euclidean dot product of coordinates equals [`GradientTriple::dot`].
    pub fn to_coords(&self) -> DVector<f64> {
        let d = self.dims();
        let mut v = DVector::zeros(d.total());
        let mut k = 0;
        for i in 0..d.n {
            v[k] = self.energy[(i, i)];
            k += 1;
        }
        let rt2 = std::f64::consts::SQRT_2;
        for i in 0..d.n {
            for j in (i + 1)..d.n {
                v[k] = self.energy[(i, j)] * rt2;
                k += 1;
            }
        }
        for i in 0..d.n {
            for j in 0..d.m2 {
                v[k] = self.noise_gain[(i, j)];
                k += 1;
            }
        }
        for i in 0..d.n {
            for j in 0..d.p1 {
                v[k] = self.feedback_gain[(i, j)];
                k += 1;
            }
        }
        v
    }

    /// Inverse of [`GradientTriple::to_coords`].
    pub fn from_coords(d: UDims, v: &DVector<f64>) -> Result<Self> {
        ensure_dim(v.len() == d.total(), || {
            format!(
                "coordinate vector length {} does not match space dimension {}",
                v.len(),
                d.total()
            )
        })?;
        let mut g = Self::zeros(d);
        let mut k = 0;
        for i in 0..d.n {
            g.energy[(i, i)] = v[k];
            k += 1;
        }
        let rt2 = std::f64::consts::SQRT_2;
        for i in 0..d.n {
            for j in (i + 1)..d.n {
                g.energy[(i, j)] = v[k] / rt2;
                g.energy[(j, i)] = v[k] / rt2;
                k += 1;
            }
        }
        for i in 0..d.n {
            for j in 0..d.m2 {
                g.noise_gain[(i, j)] = v[k];
                k += 1;
            }
        }
        for i in 0..d.n {
            for j in 0..d.p1 {
                g.feedback_gain[(i, j)] = v[k];
                k += 1;
            }
        }
        Ok(g)
    }

    /// Canonical orthonormal basis of the parameter space.
    pub fn canonical_basis(d: UDims) -> Vec<Self> {
        (0..d.total())
            .map(|k| {
                let mut v = DVector::zeros(d.total());
                v[k] = 1.0;
                Self::from_coords(d, &v).expect("canonical coordinate vector")
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(d: UDims, salt: u64) -> GradientTriple {
        let f =
            |i: usize, j: usize, s: u64| ((i * 31 + j * 17 + s as usize) % 13) as f64 / 6.0 - 1.0;
        let raw = DMatrix::from_fn(d.n, d.n, |i, j| f(i, j, salt));
        GradientTriple {
            energy: (&raw + raw.transpose()) * 0.5,
            noise_gain: DMatrix::from_fn(d.n, d.m2, |i, j| f(i, j, salt + 1)),
            feedback_gain: DMatrix::from_fn(d.n, d.p1, |i, j| f(i, j, salt + 2)),
        }
    }

    #[test]
    fn coords_round_trip_and_isometry() {
        let d = UDims { n: 3, m2: 4, p1: 2 };
        assert_eq!(d.total(), 6 + 12 + 6);
        let u = sample(d, 3);
        let w = sample(d, 8);
        let cu = u.to_coords();
        let cw = w.to_coords();
        assert!((cu.dot(&cw) - u.dot(&w)).abs() <= 1e-12 * (1.0 + u.norm() * w.norm()));
        let back = GradientTriple::from_coords(d, &cu).unwrap();
        assert!(back.add_scaled(&u, -1.0).norm() <= 1e-14);
    }

    #[test]
    fn canonical_basis_is_orthonormal() {
        let d = UDims { n: 2, m2: 2, p1: 2 };
        let basis = GradientTriple::canonical_basis(d);
        assert_eq!(basis.len(), d.total());
        for (i, u) in basis.iter().enumerate() {
            for (j, w) in basis.iter().enumerate() {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((u.dot(w) - expect).abs() <= 1e-14);
            }
        }
    }

    #[test]
    fn controller_constructor_enforces_invariants() {
        let eye = DMatrix::<f64>::identity(2, 2);
        let d_ok = DMatrix::from_row_slice(2, 4, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let ok = ControllerTriple::new(
            eye.clone(),
            DMatrix::zeros(2, 4),
            DMatrix::zeros(2, 2),
            d_ok.clone(),
        );
        assert!(ok.is_ok());

        let skew = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        assert!(ControllerTriple::new(
            skew,
            DMatrix::zeros(2, 4),
            DMatrix::zeros(2, 2),
            d_ok.clone()
        )
        .is_err());

        let d_bad = DMatrix::from_row_slice(2, 4, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        assert!(
            ControllerTriple::new(eye, DMatrix::zeros(2, 4), DMatrix::zeros(2, 2), d_bad).is_err()
        );
    }
}
