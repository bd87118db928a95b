//! Set-valued projection: Newton (single and multistart) and exact all-roots
//! solving of the univariate polynomial case.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ConstraintMap, Matrix, Vector};

/// Minimum distance between two solutions regarded as distinct.
pub const DEDUP_TOL: f64 = 1e-6;

/// Threshold on `|det|` below which a solution is considered tangential.
pub const TANGENT_DET_TOL: f64 = 1e-10;

/// Real-root acceptance threshold, relative to `max(1, |Re|)`.
pub const IMAG_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    NewtonSingle,
    PolyAllRoots,
    NewtonMultistart,
}

fn default_max_iter() -> usize {
    10
}
fn default_newton_tol() -> f64 {
    1e-8
}
fn default_n_starts() -> usize {
    32
}
fn default_period() -> u64 {
    1
}
fn default_true() -> bool {
    true
}

/// Solver configuration. `kind` is the solver used on iterations `i` with
/// `i % period == 0`; all other iterations use a single Newton start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    pub kind: SolverKind,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_newton_tol")]
    pub newton_tol: f64,
    #[serde(default = "default_n_starts")]
    pub n_starts: usize,
    /// Standard deviation of random multistart guesses; `None` means `2 sqrt(d)`.
    #[serde(default)]
    pub start_scale: Option<f64>,
    #[serde(default = "default_period")]
    pub period: u64,
    /// Drop solutions whose tangentiality determinant is below [`TANGENT_DET_TOL`].
    #[serde(default = "default_true")]
    pub filter_tangential: bool,
}

impl SolverSpec {
    pub fn new(kind: SolverKind) -> Self {
        Self {
            kind,
            max_iter: default_max_iter(),
            newton_tol: default_newton_tol(),
            n_starts: default_n_starts(),
            start_scale: None,
            period: default_period(),
            filter_tangential: true,
        }
    }

    pub fn with_period(mut self, period: u64) -> Self {
        self.period = period;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iter < 1 {
            return Err(Error::config("sampler.solver.max_iter", "must be >= 1"));
        }
        if !(self.newton_tol > 0.0 && self.newton_tol.is_finite()) {
            return Err(Error::config("sampler.solver.newton_tol", "must be finite and > 0"));
        }
        if self.period < 1 {
            return Err(Error::config("sampler.solver.period", "must be >= 1"));
        }
        if self.kind == SolverKind::NewtonMultistart && self.n_starts < 1 {
            return Err(Error::config("sampler.solver.n_starts", "must be >= 1"));
        }
        if let Some(s) = self.start_scale {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::config("sampler.solver.start_scale", "must be finite and > 0"));
            }
        }
        Ok(())
    }

    /// Solver in effect at `iteration`.
    pub fn kind_at(&self, iteration: u64) -> SolverKind {
        if iteration % self.period == 0 {
            self.kind
        } else {
            SolverKind::NewtonSingle
        }
    }

    /// Whether `iteration` uses the configured (possibly expensive) solver
    /// rather than the cheap fallback.
    pub fn is_expensive_at(&self, iteration: u64) -> bool {
        self.kind != SolverKind::NewtonSingle && iteration % self.period == 0
    }
}

fn well_conditioned(jac: &Matrix) -> bool {
    if !jac.iter().all(|v| v.is_finite()) {
        return false;
    }
    match jac.nrows() {
        1 => jac[(0, 0)] != 0.0,
        _ => {
            // Hadamard ratio: |det| relative to the product of column norms.
            let norms: f64 = jac.column_iter().map(|c| c.norm()).product();
            norms > 0.0 && jac.determinant().abs() > 1e-14 * norms
        }
    }
}

/// Full-step Newton iteration on `residual(c) = 0`.
///
/// Convergence is tested on the starting point and after every step. Returns
/// `None` when `max_iter` steps do not bring `|residual|` to `tol`, when a
/// Jacobian is singular or ill-conditioned, or when iterates stop being finite.
pub fn newton_solve<F, J>(residual: F, jac: J, c0: &Vector, max_iter: usize, tol: f64) -> Option<Vector>
where
    F: Fn(&Vector) -> Vector,
    J: Fn(&Vector) -> Matrix,
{
    let mut c = c0.clone();
    let mut r = residual(&c);
    if r.norm() <= tol {
        return Some(c);
    }
    for _ in 0..max_iter {
        let j = jac(&c);
        if !well_conditioned(&j) {
            return None;
        }
        let step = if j.nrows() == 1 {
            Vector::from_element(1, -r[0] / j[(0, 0)])
        } else {
            j.lu().solve(&(-&r))?
        };
        c += step;
        if !c.iter().all(|v| v.is_finite()) {
            return None;
        }
        r = residual(&c);
        if r.norm() <= tol {
            return Some(c);
        }
    }
    None
}

fn strip(coeffs: &[f64]) -> Result<&[f64]> {
    let scale = coeffs.iter().fold(0.0f64, |a, c| a.max(c.abs()));
    if !scale.is_finite() {
        return Err(Error::DegenerateLeadingCoefficient);
    }
    if scale == 0.0 {
        return Err(Error::InfinitelyManyRoots);
    }
    let mut n = coeffs.len();
    while n > 0 && coeffs[n - 1].abs() <= 1e-14 * scale {
        n -= 1;
    }
    if n <= 1 {
        return Err(Error::DegenerateLeadingCoefficient);
    }
    Ok(&coeffs[..n])
}

fn horner(coeffs: &[f64], z: Complex64) -> (Complex64, Complex64) {
    let mut p = Complex64::new(0.0, 0.0);
    let mut dp = Complex64::new(0.0, 0.0);
    for &a in coeffs.iter().rev() {
        dp = dp * z + p;
        p = p * z + a;
    }
    (p, dp)
}

fn horner_real(coeffs: &[f64], t: f64) -> (f64, f64) {
    let mut p = 0.0;
    let mut dp = 0.0;
    for &a in coeffs.iter().rev() {
        dp = dp * t + p;
        p = p * t + a;
    }
    (p, dp)
}

/// All complex roots of `sum_i coeffs[i] c^i` by Aberth–Ehrlich simultaneous
/// iteration, each polished by two Newton steps.
pub fn poly_all_roots(coeffs: &[f64]) -> Result<Vec<Complex64>> {
    let a = strip(coeffs)?;
    let n = a.len() - 1;
    let lead = a[n];
    let monic: Vec<f64> = a.iter().map(|c| c / lead).collect();
    if n == 1 {
        return Ok(vec![Complex64::new(-monic[0], 0.0)]);
    }

    // Fujiwara bound on the root moduli
    let bound = (0..n)
        .map(|i| {
            let m = monic[i].abs();
            if i == 0 {
                (m / 2.0).powf(1.0 / n as f64)
            } else {
                m.powf(1.0 / (n - i) as f64)
            }
        })
        .fold(0.0f64, f64::max)
        * 2.0;
    let radius = if bound > 0.0 { bound } else { 1.0 };
    let mut z: Vec<Complex64> = (0..n)
        .map(|k| Complex64::from_polar(radius, 2.0 * std::f64::consts::PI * k as f64 / n as f64 + 0.4))
        .collect();

    for _ in 0..500 {
        let mut max_rel = 0.0f64;
        for i in 0..n {
            let (p, dp) = horner(&monic, z[i]);
            if p == Complex64::new(0.0, 0.0) {
                continue;
            }
            let ratio = p / dp;
            let repulsion: Complex64 = (0..n)
                .filter(|&j| j != i)
                .map(|j| Complex64::new(1.0, 0.0) / (z[i] - z[j]))
                .sum();
            let w = ratio / (Complex64::new(1.0, 0.0) - ratio * repulsion);
            if w.is_finite() {
                z[i] -= w;
                max_rel = max_rel.max(w.norm() / (1.0 + z[i].norm()));
            }
        }
        if max_rel < 1e-15 {
            break;
        }
    }
    for root in z.iter_mut() {
        for _ in 0..2 {
            let (p, dp) = horner(&monic, *root);
            let step = p / dp;
            if step.is_finite() {
                *root -= step;
            }
        }
    }
    Ok(z)
}

/// Real roots of the polynomial, ascending, each polished in real arithmetic.
pub fn poly_real_roots(coeffs: &[f64]) -> Result<Vec<f64>> {
    let a = strip(coeffs)?;
    let mut out: Vec<f64> = poly_all_roots(a)?
        .into_iter()
        .filter(|z| z.im.abs() <= IMAG_TOL * z.re.abs().max(1.0))
        .map(|z| {
            let mut t = z.re;
            let mut best = horner_real(a, t).0.abs();
            for _ in 0..3 {
                let (p, dp) = horner_real(a, t);
                if dp == 0.0 {
                    break;
                }
                let cand = t - p / dp;
                let r = horner_real(a, cand).0.abs();
                if !(r < best) {
                    break;
                }
                t = cand;
                best = r;
            }
            t
        })
        .collect();
    out.sort_by(f64::total_cmp);
    Ok(out)
}

/// Ascending coefficients of `c -> xi(offset + direction c)` for a scalar
/// constraint with polynomial structure.
pub fn build_projection_polynomial(cm: &dyn ConstraintMap, direction: &Vector, offset: &Vector) -> Result<Vec<f64>> {
    if cm.codim() != 1 {
        return Err(Error::NoPolyStructure);
    }
    cm.line_polynomial(offset, direction).ok_or(Error::NoPolyStructure)
}

/// One concrete projection problem: find `c` with `xi(offset + direction c) = 0`,
/// then turn `(c, y)` into a full solution record.
pub trait ProjectionInstance {
    type Solution: Clone;

    /// Current state position, used to order solutions.
    fn origin(&self) -> &Vector;

    fn offset(&self) -> &Vector;

    /// `d x k`, column `j` multiplies `c_j`.
    fn direction(&self) -> &Matrix;

    /// Completes a solution at `y = offset + direction c`. `None` if the
    /// completion is not defined there (for example a singular Gram matrix).
    fn complete(&self, cm: &dyn ConstraintMap, c: Vector, y: Vector, residual: f64) -> Option<Self::Solution>;

    fn position(sol: &Self::Solution) -> &Vector;

    fn tangent_det(sol: &Self::Solution) -> f64;
}

/// Finite set of projection solutions, ordered by distance from the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalSet<S> {
    pub solutions: Vec<S>,
    pub solver: SolverKind,
}

impl<S> ProposalSet<S> {
    pub fn len(&self) -> usize {
        self.solutions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.solutions.is_empty()
    }
}

/// Solver settings resolved for one call.
#[derive(Debug, Clone, Copy)]
pub struct SolveRequest<'a> {
    pub spec: &'a SolverSpec,
    pub kind: SolverKind,
    pub tol_constraint: f64,
}

fn line_point(inst: &impl ProjectionInstance, c: &Vector) -> Vector {
    inst.offset() + inst.direction() * c
}

fn newton_from<I: ProjectionInstance>(cm: &dyn ConstraintMap, inst: &I, c0: &Vector, spec: &SolverSpec) -> Option<Vector> {
    let b = inst.direction();
    newton_solve(
        |c| cm.eval(&line_point(inst, c)),
        |c| cm.jacobian(&line_point(inst, c)).transpose() * b,
        c0,
        spec.max_iter,
        spec.newton_tol,
    )
}

fn lex_cmp(a: &Vector, b: &Vector) -> std::cmp::Ordering {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

/// Computes the realized solution set of one projection problem.
///
/// Failure to find any solution is not an error: the empty set is returned.
pub fn solve_projection_set<I, R>(cm: &dyn ConstraintMap, inst: &I, req: SolveRequest<'_>, rng: &mut R) -> ProposalSet<I::Solution>
where
    I: ProjectionInstance,
    R: Rng + ?Sized,
{
    let k = inst.direction().ncols();
    let multipliers: Vec<Vector> = match req.kind {
        SolverKind::NewtonSingle => newton_from(cm, inst, &Vector::zeros(k), req.spec).into_iter().collect(),
        SolverKind::NewtonMultistart => {
            let scale = req
                .spec
                .start_scale
                .unwrap_or_else(|| 2.0 * (cm.ambient_dim() as f64).sqrt());
            let mut out = Vec::new();
            for s in 0..req.spec.n_starts {
                let c0 = if s == 0 {
                    Vector::zeros(k)
                } else {
                    Vector::from_fn(k, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
                };
                out.extend(newton_from(cm, inst, &c0, req.spec));
            }
            out
        }
        SolverKind::PolyAllRoots => {
            let dir = inst.direction().column(0).into_owned();
            match build_projection_polynomial(cm, &dir, inst.offset()).and_then(|p| poly_real_roots(&p)) {
                Ok(roots) => roots.into_iter().map(|r| Vector::from_element(1, r)).collect(),
                Err(e) => {
                    log::debug!("all-roots solve produced no candidates: {e}");
                    Vec::new()
                }
            }
        }
    };

    let mut solutions: Vec<I::Solution> = Vec::with_capacity(multipliers.len());
    for mut c in multipliers {
        let mut y = line_point(inst, &c);
        let mut residual = cm.eval(&y).norm();
        if !(residual <= req.tol_constraint) && req.kind == SolverKind::PolyAllRoots {
            // root of the polynomial but not accurate enough on the map itself
            if let Some(refined) = newton_from(cm, inst, &c, req.spec) {
                c = refined;
                y = line_point(inst, &c);
                residual = cm.eval(&y).norm();
            }
        }
        if !(residual <= req.tol_constraint) {
            continue;
        }
        if solutions.iter().any(|s| (I::position(s) - &y).norm() <= DEDUP_TOL) {
            continue;
        }
        let Some(sol) = inst.complete(cm, c, y, residual) else {
            continue;
        };
        if req.spec.filter_tangential && !(I::tangent_det(&sol).abs() > TANGENT_DET_TOL) {
            continue;
        }
        solutions.push(sol);
    }

    let origin = inst.origin();
    let mut keyed: Vec<(f64, I::Solution)> = solutions
        .into_iter()
        .map(|s| ((I::position(&s) - origin).norm(), s))
        .collect();
    keyed.sort_by(|(da, a), (db, b)| da.total_cmp(db).then_with(|| lex_cmp(I::position(a), I::position(b))));
    ProposalSet {
        solutions: keyed.into_iter().map(|(_, s)| s).collect(),
        solver: req.kind,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn eval(c: &[f64], t: f64) -> f64 {
        horner_real(c, t).0
    }

    /// Dense sign-change scan plus bisection; finds simple real roots in [lo, hi].
    fn scan_bisect(c: &[f64], lo: f64, hi: f64, step: f64) -> Vec<f64> {
        let n = ((hi - lo) / step).round() as usize;
        let mut roots = Vec::new();
        let mut a = lo;
        let mut fa = eval(c, a);
        for i in 1..=n {
            let b = lo + i as f64 * step;
            let fb = eval(c, b);
            if fa == 0.0 {
                roots.push(a);
            } else if fa * fb < 0.0 {
                let (mut l, mut r, mut fl) = (a, b, fa);
                for _ in 0..200 {
                    let m = 0.5 * (l + r);
                    let fm = eval(c, m);
                    if fm == 0.0 {
                        l = m;
                        r = m;
                        break;
                    }
                    if fl * fm < 0.0 {
                        r = m;
                    } else {
                        l = m;
                        fl = fm;
                    }
                }
                roots.push(0.5 * (l + r));
            }
            a = b;
            fa = fb;
        }
        roots
    }

    #[test]
    fn quadratic_roots() {
        let r = poly_real_roots(&[-1.0, 0.0, 1.0]).unwrap();
        assert_eq!(r.len(), 2);
        assert!((r[0] + 1.0).abs() < 1e-15 && (r[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(poly_all_roots(&[0.0, 0.0, 0.0]), Err(Error::InfinitelyManyRoots)));
        assert!(matches!(poly_all_roots(&[2.0, 0.0, 1e-20]), Err(Error::DegenerateLeadingCoefficient)));
        // trailing near-zero leading coefficient is stripped
        let r = poly_all_roots(&[-2.0, 1.0, 1e-18]).unwrap();
        assert_eq!(r.len(), 1);
        assert!((r[0].re - 2.0).abs() < 1e-14);
    }

    #[test]
    fn complex_roots_are_found_and_rejected_as_real() {
        // (c^2 + 1)(c - 2) = c^3 - 2c^2 + c - 2
        let c = [-2.0, 1.0, -2.0, 1.0];
        let all = poly_all_roots(&c).unwrap();
        assert_eq!(all.len(), 3);
        for z in &all {
            assert!(horner(&c, *z).0.norm() < 1e-12);
        }
        let real = poly_real_roots(&c).unwrap();
        assert_eq!(real.len(), 1);
        assert!((real[0] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn torus_quartic_matches_scan_oracle() {
        use crate::problems::Torus;
        use rand::SeedableRng;
        let t = Torus::new(1.0, 0.5);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let mut checked = 0;
        for _ in 0..200 {
            let x = t.point(rng.gen_range(0.0..6.28), rng.gen_range(0.0..6.28));
            let dir = t.jacobian(&x).column(0).into_owned();
            let kick = Vector::from_fn(3, |_, _| 0.6 * rng.sample::<f64, _>(StandardNormal));
            let offset = &x + kick;
            let coeffs = build_projection_polynomial(&t, &dir, &offset).unwrap();
            let ours = poly_real_roots(&coeffs).unwrap();
            let oracle = scan_bisect(&coeffs, -20.0, 20.0, 1e-3);
            // a double root can be missed by the scan; those draws are skipped
            if oracle.len() != ours.len() {
                let disc_like = ours.windows(2).any(|w| (w[1] - w[0]).abs() < 1e-2);
                assert!(disc_like, "oracle {oracle:?} vs ours {ours:?}");
                continue;
            }
            for (a, b) in ours.iter().zip(oracle.iter()) {
                assert!((a - b).abs() < 1e-6, "{a} vs {b}");
            }
            checked += 1;
        }
        assert!(checked > 190);
    }

    #[test]
    fn newton_linear_residual() {
        let c = newton_solve(|c| c.clone(), |_| Matrix::identity(1, 1), &Vector::from_element(1, 0.5), 10, 1e-8);
        assert_eq!(c.unwrap()[0], 0.0);
    }

    #[test]
    fn newton_singular_jacobian_is_empty() {
        let r = newton_solve(
            |c| Vector::from_element(1, c[0] * c[0] + 1.0),
            |c| Matrix::from_element(1, 1, 2.0 * c[0]),
            &Vector::zeros(1),
            10,
            1e-8,
        );
        assert!(r.is_none());
    }

    #[test]
    fn newton_2d_system() {
        // x^2 + y^2 = 4, x y = 1
        let res = |c: &Vector| Vector::from_vec(vec![c[0] * c[0] + c[1] * c[1] - 4.0, c[0] * c[1] - 1.0]);
        let jac = |c: &Vector| Matrix::from_row_slice(2, 2, &[2.0 * c[0], 2.0 * c[1], c[1], c[0]]);
        let c = newton_solve(res, jac, &Vector::from_vec(vec![2.0, 0.3]), 10, 1e-12).unwrap();
        assert!(res(&c).norm() <= 1e-12);
    }

    #[test]
    fn hybrid_schedule() {
        let s = SolverSpec::new(SolverKind::PolyAllRoots).with_period(50);
        assert_eq!(s.kind_at(0), SolverKind::PolyAllRoots);
        assert_eq!(s.kind_at(49), SolverKind::NewtonSingle);
        assert_eq!(s.kind_at(100), SolverKind::PolyAllRoots);
        assert!(!SolverSpec::new(SolverKind::NewtonSingle).is_expensive_at(0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]
        #[test]
        fn recovers_known_real_roots(
            raw in prop::collection::vec(-3.0f64..3.0, 1..=6),
            lead in prop_oneof![0.5f64..4.0, -4.0f64..-0.5],
        ) {
            let mut roots = raw.clone();
            roots.sort_by(f64::total_cmp);
            prop_assume!(roots.windows(2).all(|w| w[1] - w[0] >= 0.1));
            let mut coeffs = vec![lead];
            for r in &roots {
                // multiply by (c - r)
                let mut next = vec![0.0; coeffs.len() + 1];
                for (i, a) in coeffs.iter().enumerate() {
                    next[i] -= r * a;
                    next[i + 1] += a;
                }
                coeffs = next;
            }
            let found = poly_real_roots(&coeffs).unwrap();
            prop_assert_eq!(found.len(), roots.len());
            for (a, b) in found.iter().zip(roots.iter()) {
                prop_assert!((a - b).abs() < 1e-8, "{} vs {}", a, b);
            }
            let scale = coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
            for z in poly_all_roots(&coeffs).unwrap() {
                prop_assert!(horner(&coeffs, z).0.norm() <= 1e-10 * scale);
            }
        }
    }
}
