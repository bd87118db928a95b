//! Constraint maps, regularity checks, tangent frames and cotangent projectors.
//!
//! The level set is `{x : xi(x) = 0}` with `xi: R^d -> R^k`. Jacobians are
//! stored as `d x k` matrices whose column `j` is the gradient of `xi_j`.

use std::fmt::Debug;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Smallest admissible eigenvalue of the Gram matrix, and smallest admissible
/// pivot norm during frame orthogonalization.
pub const RANK_TOL: f64 = 1e-10;

/// Default tolerance on `|xi(x)|` for points declared to lie on the manifold.
pub const TOL_CONSTRAINT: f64 = 1e-8;

/// A smooth constraint map `xi: R^d -> R^k`.
pub trait ConstraintMap: Send + Sync + Debug {
    fn ambient_dim(&self) -> usize;

    fn codim(&self) -> usize;

    fn eval(&self, x: &Vector) -> Vector;

    /// `d x k` matrix, column `j` is the gradient of `xi_j`.
    fn jacobian(&self, x: &Vector) -> Matrix;

    /// Degree of `c -> xi(a + b c)` when `k = 1` and `xi` is a polynomial.
    fn poly_degree(&self) -> Option<usize> {
        None
    }

    /// Ascending coefficients of `c -> xi(offset + direction * c)`, if the
    /// map has polynomial structure.
    fn line_polynomial(&self, _offset: &Vector, _direction: &Vector) -> Option<Vec<f64>> {
        None
    }
}

/// Diagonal symmetric positive definite mass matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MassMatrix {
    diag: Vector,
    identity: bool,
}

impl MassMatrix {
    pub fn identity(dim: usize) -> Self {
        Self {
            diag: Vector::from_element(dim, 1.0),
            identity: true,
        }
    }

    pub fn from_diagonal(diag: Vec<f64>) -> Result<Self> {
        if diag.is_empty() {
            return Err(Error::config("mass", "mass diagonal is empty"));
        }
        if let Some(bad) = diag.iter().find(|m| !(m.is_finite() && **m > 0.0)) {
            return Err(Error::config(
                "mass",
                format!("mass entries must be finite and > 0, found {bad}"),
            ));
        }
        let identity = diag.iter().all(|&m| m == 1.0);
        Ok(Self {
            diag: Vector::from_vec(diag),
            identity,
        })
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn diagonal(&self) -> &Vector {
        &self.diag
    }

    pub fn is_identity(&self) -> bool {
        self.identity
    }

    pub fn mul(&self, v: &Vector) -> Vector {
        if self.identity {
            v.clone()
        } else {
            v.component_mul(&self.diag)
        }
    }

    pub fn inv_mul(&self, v: &Vector) -> Vector {
        if self.identity {
            v.clone()
        } else {
            v.component_div(&self.diag)
        }
    }

    /// `M^{-1} A` for a matrix with `d` rows.
    pub fn inv_mul_mat(&self, a: &Matrix) -> Matrix {
        if self.identity {
            return a.clone();
        }
        let mut out = a.clone();
        for (i, mut row) in out.row_iter_mut().enumerate() {
            row /= self.diag[i];
        }
        out
    }

    pub fn det(&self) -> f64 {
        self.diag.iter().product()
    }

    /// `p^T M^{-1} p`.
    pub fn inv_quad(&self, p: &Vector) -> f64 {
        if self.identity {
            p.norm_squared()
        } else {
            p.iter().zip(self.diag.iter()).map(|(a, m)| a * a / m).sum()
        }
    }
}

/// A point declared to lie on the manifold.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfacePoint {
    pub x: Vector,
}

impl SurfacePoint {
    /// Validates `|xi(x)| <= tol`.
    pub fn new(cm: &dyn ConstraintMap, x: Vector, tol: f64) -> Result<Self> {
        let residual = cm.eval(&x).norm();
        if !(residual <= tol) {
            return Err(Error::ConstraintViolated { residual, tol });
        }
        Ok(Self { x })
    }
}

/// A point of the cotangent bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct PhasePoint {
    pub x: Vector,
    pub p: Vector,
}

impl PhasePoint {
    /// Validates both the position constraint and the momentum tangency.
    pub fn new(cm: &dyn ConstraintMap, mass: &MassMatrix, x: Vector, p: Vector, tol: f64) -> Result<Self> {
        let residual = cm.eval(&x).norm();
        if !(residual <= tol) {
            return Err(Error::ConstraintViolated { residual, tol });
        }
        let tangency = (cm.jacobian(&x).transpose() * mass.inv_mul(&p)).norm();
        if !(tangency <= tol) {
            return Err(Error::ConstraintViolated {
                residual: tangency,
                tol,
            });
        }
        Ok(Self { x, p })
    }

    pub fn reversed(&self) -> Self {
        Self {
            x: self.x.clone(),
            p: -&self.p,
        }
    }
}

/// Inner product used to orthonormalize a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricFlag {
    /// Columns span `T_x`, orthonormal for the Euclidean product.
    Standard,
    /// Columns span `T*_x`, orthonormal for `<p, q> = p^T M^{-1} q`.
    MassWeighted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TangentFrame {
    pub basis: Matrix,
    pub metric: MetricFlag,
}

/// `J^T M^{-1} J`, or `J^T J` when `mass` is `None`.
pub fn gram(jac: &Matrix, mass: Option<&MassMatrix>) -> Matrix {
    match mass {
        Some(m) if !m.is_identity() => jac.transpose() * m.inv_mul_mat(jac),
        _ => jac.transpose() * jac,
    }
}

fn min_eigenvalue(g: &Matrix) -> f64 {
    match g.nrows() {
        1 => g[(0, 0)],
        2 => {
            let (a, b, d) = (g[(0, 0)], 0.5 * (g[(0, 1)] + g[(1, 0)]), g[(1, 1)]);
            let mean = 0.5 * (a + d);
            let rad = (0.25 * (a - d) * (a - d) + b * b).sqrt();
            mean - rad
        }
        _ => g.clone().symmetric_eigenvalues().min(),
    }
}

/// Checks that the Gram matrix is positive definite and returns its inverse.
pub fn gram_inverse(g: &Matrix) -> Result<Matrix> {
    let min_eig = min_eigenvalue(g);
    if !(min_eig > RANK_TOL) {
        return Err(Error::SingularGram { min_eig });
    }
    g.clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or(Error::SingularGram { min_eig })
}

/// Verifies the full-rank condition of the Jacobian at `x`.
pub fn check_regular(cm: &dyn ConstraintMap, x: &Vector) -> Result<()> {
    gram_inverse(&gram(&cm.jacobian(x), None)).map(|_| ())
}

/// Applies `P_M(x)` to `v` given the Jacobian at `x`.
pub fn project_cotangent_with(jac: &Matrix, mass: &MassMatrix, v: &Vector) -> Result<Vector> {
    let g_inv = gram_inverse(&gram(jac, Some(mass)))?;
    let coeff = &g_inv * (jac.transpose() * mass.inv_mul(v));
    Ok(v - jac * coeff)
}

/// `P_M(x) = I - J (J^T M^{-1} J)^{-1} J^T M^{-1}`.
pub fn cotangent_projector(cm: &dyn ConstraintMap, x: &Vector, mass: &MassMatrix) -> Result<Matrix> {
    let jac = cm.jacobian(x);
    let g_inv = gram_inverse(&gram(&jac, Some(mass)))?;
    let d = cm.ambient_dim();
    let minv_jt = mass.inv_mul_mat(&jac).transpose();
    Ok(Matrix::identity(d, d) - &jac * g_inv * minv_jt)
}

fn metric_dot(a: &Vector, b: &Vector, mass: Option<&MassMatrix>) -> f64 {
    match mass {
        Some(m) if !m.is_identity() => a
            .iter()
            .zip(b.iter())
            .zip(m.diagonal().iter())
            .map(|((x, y), w)| x * y / w)
            .sum(),
        _ => a.dot(b),
    }
}

/// Builds an orthonormal basis of the tangent space (standard metric) or the
/// cotangent space (mass-weighted metric) at `x`.
///
/// The canonical basis vectors are projected onto the subspace and then
/// orthogonalized with column pivoting, largest remaining norm first. The
/// result depends only on the inputs.
pub fn tangent_frame(
    cm: &dyn ConstraintMap,
    x: &Vector,
    mass: &MassMatrix,
    flag: MetricFlag,
) -> Result<TangentFrame> {
    let d = cm.ambient_dim();
    let k = cm.codim();
    let jac = cm.jacobian(x);
    let (projector, metric) = match flag {
        MetricFlag::Standard => {
            let g_inv = gram_inverse(&gram(&jac, None))?;
            (Matrix::identity(d, d) - &jac * g_inv * jac.transpose(), None)
        }
        MetricFlag::MassWeighted => (cotangent_projector(cm, x, mass)?, Some(mass)),
    };

    let mut candidates: Vec<Vector> = (0..d).map(|i| projector.column(i).into_owned()).collect();
    let mut basis = Matrix::zeros(d, d - k);
    for col in 0..d - k {
        let (best, norm) = candidates
            .iter()
            .enumerate()
            .map(|(i, v)| (i, metric_dot(v, v, metric).sqrt()))
            .fold((usize::MAX, f64::NEG_INFINITY), |acc, (i, n)| if n > acc.1 { (i, n) } else { acc });
        if !(norm >= RANK_TOL) {
            return Err(Error::RankDeficient { pivot_norm: norm });
        }
        let mut q = candidates.swap_remove(best) / norm;
        // second pass against the accepted columns
        for j in 0..col {
            let prev = basis.column(j).into_owned();
            let r = metric_dot(&prev, &q, metric);
            q -= prev * r;
        }
        let n2 = metric_dot(&q, &q, metric).sqrt();
        q /= n2;
        for v in candidates.iter_mut() {
            let r = metric_dot(&q, v, metric);
            *v -= &q * r;
        }
        basis.set_column(col, &q);
    }
    Ok(TangentFrame { basis, metric: flag })
}

/// Draws `p = beta^{-1/2} P_M(x) w` with `w ~ N(0, M)`.
pub fn sample_cotangent_gaussian<R: Rng + ?Sized>(
    cm: &dyn ConstraintMap,
    x: &Vector,
    mass: &MassMatrix,
    beta: f64,
    rng: &mut R,
) -> Result<Vector> {
    let jac = cm.jacobian(x);
    sample_cotangent_gaussian_with(&jac, mass, beta, rng)
}

pub(crate) fn sample_cotangent_gaussian_with<R: Rng + ?Sized>(
    jac: &Matrix,
    mass: &MassMatrix,
    beta: f64,
    rng: &mut R,
) -> Result<Vector> {
    let d = jac.nrows();
    let w = Vector::from_fn(d, |i, _| {
        let z: f64 = rng.sample(StandardNormal);
        z * mass.diagonal()[i].sqrt()
    });
    Ok(project_cotangent_with(jac, mass, &w)? / beta.sqrt())
}

/// Density of the mass-weighted surface measure relative to the Euclidean one:
/// `det(M)^{1/2} det(J^T M^{-1} J)^{1/2} det(J^T J)^{-1/2}`.
pub fn nu_weight(cm: &dyn ConstraintMap, x: &Vector, mass: &MassMatrix) -> Result<f64> {
    let jac = cm.jacobian(x);
    let g = gram(&jac, None);
    gram_inverse(&g)?;
    if mass.is_identity() {
        return Ok(1.0);
    }
    let gm = gram(&jac, Some(mass));
    gram_inverse(&gm)?;
    Ok((mass.det() * gm.determinant() / g.determinant()).sqrt())
}

/// Central finite-difference Jacobian of `cm.eval`, `d x k`.
pub fn finite_difference_jacobian(cm: &dyn ConstraintMap, x: &Vector, h: f64) -> Matrix {
    let d = cm.ambient_dim();
    let k = cm.codim();
    let mut out = Matrix::zeros(d, k);
    for i in 0..d {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        let diff = (cm.eval(&xp) - cm.eval(&xm)) / (2.0 * h);
        out.set_row(i, &diff.transpose());
    }
    out
}
