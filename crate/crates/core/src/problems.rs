//! Built-in constraint maps and potentials.

use std::fmt::Debug;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ConstraintMap, Matrix, Vector};

/// Potential energy with its gradient.
pub trait Potential: Send + Sync + Debug {
    fn value(&self, x: &Vector) -> f64;

    fn gradient(&self, x: &Vector) -> Vector;

    /// Lets hot loops skip gradient evaluations.
    fn is_zero(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroPotential;

impl Potential for ZeroPotential {
    fn value(&self, _x: &Vector) -> f64 {
        0.0
    }

    fn gradient(&self, x: &Vector) -> Vector {
        Vector::zeros(x.len())
    }

    fn is_zero(&self) -> bool {
        true
    }
}

/// `V(x) = (x1 - x2)^2 + 5 ((x1^2 + x2^2) / (R + r)^2 - 1)^2`, with minima at
/// `±((R+r)/√2, (R+r)/√2, 0)` on the torus.
#[derive(Debug, Clone, Copy)]
pub struct TorusBimodal {
    pub big_r: f64,
    pub small_r: f64,
}

impl Potential for TorusBimodal {
    fn value(&self, x: &Vector) -> f64 {
        let s = (self.big_r + self.small_r).powi(2);
        let q = (x[0] * x[0] + x[1] * x[1]) / s - 1.0;
        (x[0] - x[1]).powi(2) + 5.0 * q * q
    }

    fn gradient(&self, x: &Vector) -> Vector {
        let s = (self.big_r + self.small_r).powi(2);
        let q = (x[0] * x[0] + x[1] * x[1]) / s - 1.0;
        let diff = 2.0 * (x[0] - x[1]);
        let mut g = Vector::zeros(x.len());
        g[0] = diff + 20.0 * q * x[0] / s;
        g[1] = -diff + 20.0 * q * x[1] / s;
        g
    }
}

/// `V(x) = (x1 - center)^2 / 2`.
#[derive(Debug, Clone, Copy)]
pub struct FirstCoordinateQuadratic {
    pub center: f64,
}

impl Potential for FirstCoordinateQuadratic {
    fn value(&self, x: &Vector) -> f64 {
        0.5 * (x[0] - self.center).powi(2)
    }

    fn gradient(&self, x: &Vector) -> Vector {
        let mut g = Vector::zeros(x.len());
        g[0] = x[0] - self.center;
        g
    }
}

/// Unit circle, `xi(x) = (x1^2 + x2^2 - 1) / 2`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Circle;

impl ConstraintMap for Circle {
    fn ambient_dim(&self) -> usize {
        2
    }

    fn codim(&self) -> usize {
        1
    }

    fn eval(&self, x: &Vector) -> Vector {
        Vector::from_element(1, 0.5 * (x[0] * x[0] + x[1] * x[1] - 1.0))
    }

    fn jacobian(&self, x: &Vector) -> Matrix {
        Matrix::from_column_slice(2, 1, &[x[0], x[1]])
    }

    fn poly_degree(&self) -> Option<usize> {
        Some(2)
    }

    fn line_polynomial(&self, a: &Vector, b: &Vector) -> Option<Vec<f64>> {
        Some(vec![0.5 * (a.norm_squared() - 1.0), a.dot(b), 0.5 * b.norm_squared()])
    }
}

/// Torus in R^3 as the zero set of the quartic
/// `(R^2 - r^2 + |x|^2)^2 - 4 R^2 (x1^2 + x2^2)`.
#[derive(Debug, Clone, Copy)]
pub struct Torus {
    pub big_r: f64,
    pub small_r: f64,
}

impl Torus {
    pub fn new(big_r: f64, small_r: f64) -> Self {
        Self { big_r, small_r }
    }

    /// `(R - sqrt(x1^2 + x2^2))^2 + x3^2 - r^2`, the same surface.
    pub fn sqrt_form(&self, x: &Vector) -> f64 {
        let rho = (x[0] * x[0] + x[1] * x[1]).sqrt();
        (self.big_r - rho).powi(2) + x[2] * x[2] - self.small_r * self.small_r
    }

    /// Maps angles `(phi, theta)` to the surface.
    pub fn point(&self, phi: f64, theta: f64) -> Vector {
        let rho = self.big_r + self.small_r * phi.cos();
        Vector::from_vec(vec![rho * theta.cos(), rho * theta.sin(), self.small_r * phi.sin()])
    }

    /// Inner equator point `(R - r, 0, 0)`.
    pub fn start_point(&self) -> Vector {
        Vector::from_vec(vec![self.big_r - self.small_r, 0.0, 0.0])
    }

    fn offset(&self) -> f64 {
        self.big_r * self.big_r - self.small_r * self.small_r
    }
}

impl ConstraintMap for Torus {
    fn ambient_dim(&self) -> usize {
        3
    }

    fn codim(&self) -> usize {
        1
    }

    fn eval(&self, x: &Vector) -> Vector {
        let s = self.offset() + x.norm_squared();
        let rho2 = x[0] * x[0] + x[1] * x[1];
        Vector::from_element(1, s * s - 4.0 * self.big_r * self.big_r * rho2)
    }

    fn jacobian(&self, x: &Vector) -> Matrix {
        let s = self.offset() + x.norm_squared();
        let r2 = 8.0 * self.big_r * self.big_r;
        Matrix::from_column_slice(
            3,
            1,
            &[
                4.0 * s * x[0] - r2 * x[0],
                4.0 * s * x[1] - r2 * x[1],
                4.0 * s * x[2],
            ],
        )
    }

    fn poly_degree(&self) -> Option<usize> {
        Some(4)
    }

    fn line_polynomial(&self, a: &Vector, b: &Vector) -> Option<Vec<f64>> {
        let u0 = self.offset() + a.norm_squared();
        let u1 = 2.0 * a.dot(b);
        let u2 = b.norm_squared();
        let t0 = a[0] * a[0] + a[1] * a[1];
        let t1 = 2.0 * (a[0] * b[0] + a[1] * b[1]);
        let t2 = b[0] * b[0] + b[1] * b[1];
        let w = 4.0 * self.big_r * self.big_r;
        Some(vec![
            u0 * u0 - w * t0,
            2.0 * u0 * u1 - w * t1,
            u1 * u1 + 2.0 * u0 * u2 - w * t2,
            2.0 * u1 * u2,
            u2 * u2,
        ])
    }
}

/// Intersection of the radius-3 sphere in R^10 with `x1 x2 x3 = 2`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sphere9d;

impl Sphere9d {
    /// `x1 = x2 = x3 = 2^{1/3}`, remaining coordinates equal.
    pub fn reference_point() -> Vector {
        let a = 2f64.cbrt();
        let t = ((9.0 - 3.0 * a * a) / 7.0).sqrt();
        Vector::from_fn(10, |i, _| if i < 3 { a } else { t })
    }
}

impl ConstraintMap for Sphere9d {
    fn ambient_dim(&self) -> usize {
        10
    }

    fn codim(&self) -> usize {
        2
    }

    fn eval(&self, x: &Vector) -> Vector {
        Vector::from_vec(vec![0.5 * (x.norm_squared() - 9.0), x[0] * x[1] * x[2] - 2.0])
    }

    fn jacobian(&self, x: &Vector) -> Matrix {
        let mut j = Matrix::zeros(10, 2);
        j.set_column(0, x);
        j[(0, 1)] = x[1] * x[2];
        j[(1, 1)] = x[0] * x[2];
        j[(2, 1)] = x[0] * x[1];
        j
    }
}

/// One term `coeff * prod_i x_i^{exponents[i]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Monomial {
    pub coeff: f64,
    pub exponents: Vec<u32>,
}

/// User-supplied scalar polynomial constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialConstraint {
    dim: usize,
    terms: Vec<Monomial>,
    degree: usize,
}

impl PolynomialConstraint {
    pub fn new(dim: usize, terms: Vec<Monomial>) -> Result<Self> {
        if dim < 2 {
            return Err(Error::config("problem_params.dim", "dimension must be at least 2"));
        }
        if terms.is_empty() {
            return Err(Error::config("problem_params.terms", "at least one term is required"));
        }
        for (i, t) in terms.iter().enumerate() {
            if t.exponents.len() != dim {
                return Err(Error::config(
                    format!("problem_params.terms[{i}].exponents"),
                    format!("expected {dim} exponents, found {}", t.exponents.len()),
                ));
            }
            if !t.coeff.is_finite() {
                return Err(Error::config(format!("problem_params.terms[{i}].coeff"), "not finite"));
            }
        }
        let degree = terms
            .iter()
            .filter(|t| t.coeff != 0.0)
            .map(|t| t.exponents.iter().sum::<u32>() as usize)
            .max()
            .unwrap_or(0);
        Ok(Self { dim, terms, degree })
    }
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

impl ConstraintMap for PolynomialConstraint {
    fn ambient_dim(&self) -> usize {
        self.dim
    }

    fn codim(&self) -> usize {
        1
    }

    fn eval(&self, x: &Vector) -> Vector {
        let v = self
            .terms
            .iter()
            .map(|t| {
                t.exponents
                    .iter()
                    .enumerate()
                    .fold(t.coeff, |acc, (i, &e)| acc * x[i].powi(e as i32))
            })
            .sum();
        Vector::from_element(1, v)
    }

    fn jacobian(&self, x: &Vector) -> Matrix {
        let mut g = Matrix::zeros(self.dim, 1);
        for t in &self.terms {
            for (i, &ei) in t.exponents.iter().enumerate() {
                if ei == 0 {
                    continue;
                }
                let mut v = t.coeff * ei as f64;
                for (j, &ej) in t.exponents.iter().enumerate() {
                    let e = if i == j { ej - 1 } else { ej };
                    v *= x[j].powi(e as i32);
                }
                g[(i, 0)] += v;
            }
        }
        g
    }

    fn poly_degree(&self) -> Option<usize> {
        Some(self.degree)
    }

    fn line_polynomial(&self, a: &Vector, b: &Vector) -> Option<Vec<f64>> {
        let mut out = vec![0.0; self.degree + 1];
        for t in &self.terms {
            let mut p = vec![t.coeff];
            for (i, &e) in t.exponents.iter().enumerate() {
                for _ in 0..e {
                    p = poly_mul(&p, &[a[i], b[i]]);
                }
            }
            for (k, c) in p.into_iter().enumerate() {
                out[k] += c;
            }
        }
        Some(out)
    }
}

/// Names of the built-in problems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProblemKind {
    #[serde(rename = "circle")]
    Circle,
    #[serde(rename = "torus")]
    Torus,
    #[serde(rename = "sphere9d")]
    Sphere9d,
    #[serde(rename = "custom-polynomial-k1")]
    CustomPolynomial,
}

impl std::str::FromStr for ProblemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "circle" => Ok(Self::Circle),
            "torus" => Ok(Self::Torus),
            "sphere9d" => Ok(Self::Sphere9d),
            "custom-polynomial-k1" => Ok(Self::CustomPolynomial),
            other => Err(Error::UnknownProblem(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PotentialKind {
    Zero,
    Bimodal,
    SphereQuadratic,
}

/// Problem-specific parameters; which fields are required depends on the problem.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemParams {
    #[serde(rename = "R", default, skip_serializing_if = "Option::is_none")]
    pub big_r: Option<f64>,
    #[serde(rename = "r", default, skip_serializing_if = "Option::is_none")]
    pub small_r: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub potential: Option<PotentialKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terms: Option<Vec<Monomial>>,
}

/// How states are grouped for occupancy and transition counting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ComponentTracker {
    /// Connected components of the 9D-sphere level set, by sign pattern.
    SphereSigns,
    /// Basins of the bimodal torus potential, split by the line `x1 + x2 = 0`.
    TorusModes,
}

impl ComponentTracker {
    pub fn classify(&self, x: &Vector) -> Result<usize> {
        match self {
            ComponentTracker::SphereSigns => crate::diagnostics::sphere_component(x),
            ComponentTracker::TorusModes => Ok(usize::from(x[0] + x[1] < 0.0)),
        }
    }
}

/// A constraint map with its target potential and default starting point.
#[derive(Debug, Clone)]
pub struct Problem {
    pub kind: ProblemKind,
    pub constraint: Arc<dyn ConstraintMap>,
    pub potential: Arc<dyn Potential>,
    pub potential_kind: PotentialKind,
    pub default_start: Option<Vector>,
    pub tracker: Option<ComponentTracker>,
}

fn positive(name: &str, v: Option<f64>) -> Result<f64> {
    let v = v.ok_or_else(|| Error::MissingParam(name.to_string()))?;
    if !(v.is_finite() && v > 0.0) {
        return Err(Error::config(format!("problem_params.{name}"), "must be finite and > 0"));
    }
    Ok(v)
}

/// Instantiates a built-in problem from its parameters.
pub fn builtin_problem(kind: ProblemKind, params: &ProblemParams) -> Result<Problem> {
    let potential_kind = params.potential.unwrap_or(PotentialKind::Zero);
    let reject_potential = |allowed: &[PotentialKind]| -> Result<()> {
        if allowed.contains(&potential_kind) {
            Ok(())
        } else {
            Err(Error::config(
                "problem_params.potential",
                format!("{potential_kind:?} is not available for {kind:?}"),
            ))
        }
    };
    match kind {
        ProblemKind::Circle => {
            reject_potential(&[PotentialKind::Zero])?;
            Ok(Problem {
                kind,
                constraint: Arc::new(Circle),
                potential: Arc::new(ZeroPotential),
                potential_kind,
                default_start: Some(Vector::from_vec(vec![0.0, 1.0])),
                tracker: None,
            })
        }
        ProblemKind::Torus => {
            let big_r = positive("R", params.big_r)?;
            let small_r = positive("r", params.small_r)?;
            if small_r >= big_r {
                return Err(Error::config("problem_params.r", "must satisfy 0 < r < R"));
            }
            reject_potential(&[PotentialKind::Zero, PotentialKind::Bimodal])?;
            let torus = Torus::new(big_r, small_r);
            let (potential, tracker): (Arc<dyn Potential>, _) = match potential_kind {
                PotentialKind::Bimodal => (
                    Arc::new(TorusBimodal { big_r, small_r }),
                    Some(ComponentTracker::TorusModes),
                ),
                _ => (Arc::new(ZeroPotential), None),
            };
            Ok(Problem {
                kind,
                default_start: Some(torus.start_point()),
                constraint: Arc::new(torus),
                potential,
                potential_kind,
                tracker,
            })
        }
        ProblemKind::Sphere9d => {
            let potential_kind = params.potential.unwrap_or(PotentialKind::SphereQuadratic);
            let potential: Arc<dyn Potential> = match potential_kind {
                PotentialKind::SphereQuadratic => Arc::new(FirstCoordinateQuadratic { center: 0.6 }),
                PotentialKind::Zero => Arc::new(ZeroPotential),
                PotentialKind::Bimodal => {
                    return Err(Error::config(
                        "problem_params.potential",
                        "Bimodal is not available for Sphere9d",
                    ))
                }
            };
            Ok(Problem {
                kind,
                constraint: Arc::new(Sphere9d),
                potential,
                potential_kind,
                default_start: Some(Sphere9d::reference_point()),
                tracker: Some(ComponentTracker::SphereSigns),
            })
        }
        ProblemKind::CustomPolynomial => {
            let dim = params.dim.ok_or_else(|| Error::MissingParam("dim".into()))?;
            let terms = params.terms.clone().ok_or_else(|| Error::MissingParam("terms".into()))?;
            reject_potential(&[PotentialKind::Zero])?;
            Ok(Problem {
                kind,
                constraint: Arc::new(PolynomialConstraint::new(dim, terms)?),
                potential: Arc::new(ZeroPotential),
                potential_kind,
                default_start: None,
                tracker: None,
            })
        }
    }
}
