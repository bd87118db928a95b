//! Deterministic proposal maps: the MALA forward map and its velocity
//! inverse, and one RATTLE step with momentum reversal together with its
//! momentum inverse.

use crate::error::{Error, Result};
use crate::geometry::{
    cotangent_projector, gram, gram_inverse, project_cotangent_with, tangent_frame, ConstraintMap, MassMatrix, Matrix,
    MetricFlag, PhasePoint, TangentFrame, Vector, TOL_CONSTRAINT,
};
use crate::problems::Potential;
use crate::rootfind::ProjectionInstance;

fn gradient_or_zero(pot: &dyn Potential, x: &Vector) -> Vector {
    if pot.is_zero() {
        Vector::zeros(x.len())
    } else {
        pot.gradient(x)
    }
}

/// One element of a MALA proposal set.
#[derive(Debug, Clone, PartialEq)]
pub struct MalaSolution {
    pub y: Vector,
    pub c: Vector,
    pub residual: f64,
    /// `det(grad xi(y)^T grad xi(x))`.
    pub tangent_det: f64,
}

/// Quantities at the current MALA state shared by the forward and reverse maps.
#[derive(Debug, Clone)]
pub struct MalaContext {
    pub x: Vector,
    pub jac: Matrix,
    pub frame: TangentFrame,
    /// `x - tau grad Vbar(x)`.
    pub drifted: Vector,
    pub tau: f64,
}

impl MalaContext {
    pub fn new(cm: &dyn ConstraintMap, x: &Vector, proposal_potential: &dyn Potential, tau: f64) -> Result<Self> {
        let frame = tangent_frame(cm, x, &MassMatrix::identity(x.len()), MetricFlag::Standard)?;
        Ok(Self {
            x: x.clone(),
            jac: cm.jacobian(x),
            frame,
            drifted: x - gradient_or_zero(proposal_potential, x) * tau,
            tau,
        })
    }

    /// Unconstrained part of the proposal, `x - tau grad Vbar(x) + sqrt(2 tau) U v`.
    pub fn free_point(&self, v: &Vector) -> Vector {
        &self.drifted + &self.frame.basis * v * (2.0 * self.tau).sqrt()
    }

    pub fn forward(&self, v: &Vector, c: &Vector) -> Vector {
        self.free_point(v) + &self.jac * c
    }

    pub fn reverse_velocity(&self, y: &Vector) -> Vector {
        self.frame.basis.transpose() * (y - &self.drifted) / (2.0 * self.tau).sqrt()
    }

    pub fn multiplier_from_target(&self, y: &Vector) -> Result<Vector> {
        let g_inv = gram_inverse(&gram(&self.jac, None))?;
        Ok(g_inv * (self.jac.transpose() * (y - &self.drifted)))
    }

    pub fn instance(&self, v: &Vector) -> MalaInstance<'_> {
        MalaInstance {
            ctx: self,
            offset: self.free_point(v),
        }
    }
}

/// The constraint equation for one velocity draw.
#[derive(Debug, Clone)]
pub struct MalaInstance<'a> {
    ctx: &'a MalaContext,
    offset: Vector,
}

impl ProjectionInstance for MalaInstance<'_> {
    type Solution = MalaSolution;

    fn origin(&self) -> &Vector {
        &self.ctx.x
    }

    fn offset(&self) -> &Vector {
        &self.offset
    }

    fn direction(&self) -> &Matrix {
        &self.ctx.jac
    }

    fn complete(&self, cm: &dyn ConstraintMap, c: Vector, y: Vector, residual: f64) -> Option<MalaSolution> {
        let tangent_det = (cm.jacobian(&y).transpose() * &self.ctx.jac).determinant();
        Some(MalaSolution {
            y,
            c,
            residual,
            tangent_det,
        })
    }

    fn position(sol: &MalaSolution) -> &Vector {
        &sol.y
    }

    fn tangent_det(sol: &MalaSolution) -> f64 {
        sol.tangent_det
    }
}

/// `x - tau grad Vbar(x) + sqrt(2 tau) U v + grad xi(x) c`.
pub fn mala_forward(
    cm: &dyn ConstraintMap,
    x: &Vector,
    frame: &TangentFrame,
    v: &Vector,
    c: &Vector,
    tau: f64,
    proposal_potential: &dyn Potential,
) -> Vector {
    x - gradient_or_zero(proposal_potential, x) * tau + &frame.basis * v * (2.0 * tau).sqrt() + cm.jacobian(x) * c
}

/// `(2 tau)^{-1/2} U^T (y - x + tau grad Vbar(x))`.
pub fn mala_reverse_velocity(
    x: &Vector,
    frame: &TangentFrame,
    y: &Vector,
    tau: f64,
    proposal_potential: &dyn Potential,
) -> Vector {
    let shifted = y - x + gradient_or_zero(proposal_potential, x) * tau;
    frame.basis.transpose() * shifted / (2.0 * tau).sqrt()
}

/// Multiplier `c` with `y = F_x(G_x(y), c)`.
pub fn mala_multiplier_from_target(
    cm: &dyn ConstraintMap,
    x: &Vector,
    y: &Vector,
    tau: f64,
    proposal_potential: &dyn Potential,
) -> Result<Vector> {
    let jac = cm.jacobian(x);
    let g_inv = gram_inverse(&gram(&jac, None))?;
    let shifted = y - x + gradient_or_zero(proposal_potential, x) * tau;
    Ok(g_inv * (jac.transpose() * shifted))
}

/// One RATTLE step followed by momentum reversal.
#[derive(Debug, Clone, PartialEq)]
pub struct RattleSolution {
    /// `(x1, -p1)`.
    pub z1: PhasePoint,
    pub lambda_x: Vector,
    pub lambda_p: Vector,
    pub residual: f64,
    /// `det(grad xi(x1)^T M^{-1} grad xi(x))`.
    pub tangent_det: f64,
}

/// Quantities at the current HMC phase point.
#[derive(Debug, Clone)]
pub struct RattleContext<'a> {
    pub x: Vector,
    pub p: Vector,
    pub jac: Matrix,
    pub tau: f64,
    mass: &'a MassMatrix,
    proposal_potential: &'a dyn Potential,
    /// `p - (tau/2) grad Vbar(x)`.
    half_kick: Vector,
    /// `x + tau M^{-1} p - (tau^2/2) M^{-1} grad Vbar(x)`.
    offset: Vector,
    /// `tau M^{-1} grad xi(x)`.
    direction: Matrix,
}

impl<'a> RattleContext<'a> {
    pub fn new(
        cm: &dyn ConstraintMap,
        x: &Vector,
        p: &Vector,
        mass: &'a MassMatrix,
        tau: f64,
        proposal_potential: &'a dyn Potential,
    ) -> Self {
        let jac = cm.jacobian(x);
        let half_kick = p - gradient_or_zero(proposal_potential, x) * (0.5 * tau);
        let offset = x + mass.inv_mul(&half_kick) * tau;
        let direction = mass.inv_mul_mat(&jac) * tau;
        Self {
            x: x.clone(),
            p: p.clone(),
            jac,
            tau,
            mass,
            proposal_potential,
            half_kick,
            offset,
            direction,
        }
    }

    /// Position reached with multiplier `lambda_x`.
    pub fn position(&self, lambda_x: &Vector) -> Vector {
        &self.offset + &self.direction * lambda_x
    }

    /// Completes the step from `x1 = position(lambda_x)`.
    pub fn finish(&self, cm: &dyn ConstraintMap, lambda_x: Vector, x1: Vector, residual: f64) -> Result<RattleSolution> {
        let half = &self.half_kick + &self.jac * &lambda_x;
        let pre = half - gradient_or_zero(self.proposal_potential, &x1) * (0.5 * self.tau);
        let jac1 = cm.jacobian(&x1);
        let g_inv = gram_inverse(&gram(&jac1, Some(self.mass)))?;
        let lambda_p = -(g_inv * (jac1.transpose() * self.mass.inv_mul(&pre)));
        let p1 = pre + &jac1 * &lambda_p;
        let tangent_det = (jac1.transpose() * self.mass.inv_mul_mat(&self.jac)).determinant();
        Ok(RattleSolution {
            z1: PhasePoint { x: x1, p: -p1 },
            lambda_x,
            lambda_p,
            residual,
            tangent_det,
        })
    }

    /// Position multiplier that carries `(x, p)` to `x1`.
    pub fn multiplier_from_target(&self, x1: &Vector) -> Result<Vector> {
        let g_inv = gram_inverse(&gram(&self.jac, Some(self.mass)))?;
        Ok(g_inv * (self.jac.transpose() * (x1 - &self.offset)) / self.tau)
    }
}

impl ProjectionInstance for RattleContext<'_> {
    type Solution = RattleSolution;

    fn origin(&self) -> &Vector {
        &self.x
    }

    fn offset(&self) -> &Vector {
        &self.offset
    }

    fn direction(&self) -> &Matrix {
        &self.direction
    }

    fn complete(&self, cm: &dyn ConstraintMap, c: Vector, y: Vector, residual: f64) -> Option<RattleSolution> {
        self.finish(cm, c, y, residual).ok()
    }

    fn position(sol: &RattleSolution) -> &Vector {
        &sol.z1.x
    }

    fn tangent_det(sol: &RattleSolution) -> f64 {
        sol.tangent_det
    }
}

/// One RATTLE step with momentum reversal for a given position multiplier.
pub fn rattle_step(
    cm: &dyn ConstraintMap,
    z: &PhasePoint,
    lambda_x: &Vector,
    mass: &MassMatrix,
    tau: f64,
    proposal_potential: &dyn Potential,
) -> Result<RattleSolution> {
    let ctx = RattleContext::new(cm, &z.x, &z.p, mass, tau, proposal_potential);
    let x1 = ctx.position(lambda_x);
    let residual = cm.eval(&x1).norm();
    if !(residual <= TOL_CONSTRAINT) {
        return Err(Error::ConstraintViolated {
            residual,
            tol: TOL_CONSTRAINT,
        });
    }
    ctx.finish(cm, lambda_x.clone(), x1, residual)
}

/// `(1/tau) P_M(x) M (x1 - x + (tau^2/2) M^{-1} grad Vbar(x))`.
pub fn rattle_reverse_momentum(
    cm: &dyn ConstraintMap,
    x: &Vector,
    x1: &Vector,
    mass: &MassMatrix,
    tau: f64,
    proposal_potential: &dyn Potential,
) -> Result<Vector> {
    let shift = x1 - x + mass.inv_mul(&gradient_or_zero(proposal_potential, x)) * (0.5 * tau * tau);
    let jac = cm.jacobian(x);
    Ok(project_cotangent_with(&jac, mass, &mass.mul(&shift))? / tau)
}

/// Position multiplier carrying `(x, p)` to `x1`.
pub fn rattle_multiplier_from_target(
    cm: &dyn ConstraintMap,
    z: &PhasePoint,
    x1: &Vector,
    mass: &MassMatrix,
    tau: f64,
    proposal_potential: &dyn Potential,
) -> Result<Vector> {
    RattleContext::new(cm, &z.x, &z.p, mass, tau, proposal_potential).multiplier_from_target(x1)
}

/// `P_M(x)` as a dense matrix; re-exported for callers building charts.
pub fn projector(cm: &dyn ConstraintMap, x: &Vector, mass: &MassMatrix) -> Result<Matrix> {
    cotangent_projector(cm, x, mass)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::sample_cotangent_gaussian;
    use crate::problems::{Circle, Sphere9d, Torus, TorusBimodal, ZeroPotential};
    use crate::rootfind::{solve_projection_set, SolveRequest, SolverKind, SolverSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gauss(rng: &mut ChaCha8Rng, n: usize) -> Vector {
        Vector::from_fn(n, |_, _| rng.sample(StandardNormal))
    }

    #[test]
    fn mala_forward_identity_and_circle_example() {
        let x = Vector::from_vec(vec![0.0, 1.0]);
        let ctx = MalaContext::new(&Circle, &x, &ZeroPotential, 0.5).unwrap();
        let zero1 = Vector::zeros(1);
        assert_eq!(ctx.forward(&zero1, &zero1), x);
        // orient the frame so that v = 0.5 moves toward +x1
        let sign = ctx.frame.basis[(0, 0)].signum();
        let v = Vector::from_element(1, 0.5 * sign);
        let c = Vector::from_element(1, -(1.0 - 0.75f64.sqrt()));
        let y = mala_forward(&Circle, &x, &ctx.frame, &v, &c, 0.5, &ZeroPotential);
        assert!((y[0] - 0.5).abs() < 1e-15 && (y[1] - 0.75f64.sqrt()).abs() < 1e-15);

        let back = mala_reverse_velocity(&x, &ctx.frame, &y, 0.5, &ZeroPotential);
        assert!((back[0] - v[0]).abs() < 1e-15);
        let c_back = mala_multiplier_from_target(&Circle, &x, &y, 0.5, &ZeroPotential).unwrap();
        assert!((c_back[0] - (0.75f64.sqrt() - 1.0)).abs() < 1e-15);
        assert_eq!(ctx.reverse_velocity(&x), Vector::zeros(1));
    }

    #[test]
    fn torus_free_point_is_off_manifold() {
        let t = Torus::new(1.0, 0.5);
        let x = Vector::from_vec(vec![0.5, 0.0, 0.0]);
        let ctx = MalaContext::new(&t, &x, &ZeroPotential, 0.8).unwrap();
        let y = ctx.free_point(&Vector::from_vec(vec![0.3, 0.2]));
        assert!(t.eval(&y)[0].abs() > 1e-3);
    }

    #[test]
    fn circle_projection_sets() {
        let x = Vector::from_vec(vec![0.0, 1.0]);
        let ctx = MalaContext::new(&Circle, &x, &ZeroPotential, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for kind in [SolverKind::PolyAllRoots, SolverKind::NewtonSingle, SolverKind::NewtonMultistart] {
            let spec = SolverSpec::new(kind);
            let req = SolveRequest {
                spec: &spec,
                kind,
                tol_constraint: 1e-8,
            };
            let inside = solve_projection_set(&Circle, &ctx.instance(&Vector::from_element(1, 0.5)), req, &mut rng);
            let outside = solve_projection_set(&Circle, &ctx.instance(&Vector::from_element(1, 1.5)), req, &mut rng);
            assert!(outside.is_empty());
            match kind {
                SolverKind::NewtonSingle => {
                    assert_eq!(inside.len(), 1);
                    assert!((inside.solutions[0].c[0] - (0.75f64.sqrt() - 1.0)).abs() < 1e-8);
                    assert!(inside.solutions[0].y[1] > 0.0);
                }
                _ => {
                    assert_eq!(inside.len(), 2);
                    // nearest first: the upper branch
                    assert!(inside.solutions[0].y[1] > 0.0 && inside.solutions[1].y[1] < 0.0);
                    let tol = if kind == SolverKind::PolyAllRoots { 1e-12 } else { 1e-8 };
                    assert!((inside.solutions[1].y[1] + 0.75f64.sqrt()).abs() < tol);
                }
            }
        }
    }

    #[test]
    fn distinct_velocities_give_disjoint_sets() {
        let x = Vector::from_vec(vec![0.0, 1.0]);
        let ctx = MalaContext::new(&Circle, &x, &ZeroPotential, 0.5).unwrap();
        let spec = SolverSpec::new(SolverKind::PolyAllRoots);
        let req = SolveRequest {
            spec: &spec,
            kind: SolverKind::PolyAllRoots,
            tol_constraint: 1e-8,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let vs = [-0.9, -0.3, 0.1, 0.6];
        let sets: Vec<_> = vs
            .iter()
            .map(|&v| solve_projection_set(&Circle, &ctx.instance(&Vector::from_element(1, v)), req, &mut rng))
            .collect();
        for (i, a) in sets.iter().enumerate() {
            for s in &a.solutions {
                assert!((ctx.reverse_velocity(&s.y)[0] - vs[i]).abs() < 1e-10);
            }
            for b in sets.iter().skip(i + 1) {
                for s in &a.solutions {
                    for t in &b.solutions {
                        assert!((&s.y - &t.y).norm() > 1e-3);
                    }
                }
            }
        }
    }

    #[test]
    fn mala_round_trip_on_torus() {
        let t = Torus::new(1.0, 0.5);
        let pot = TorusBimodal { big_r: 1.0, small_r: 0.5 };
        let spec = SolverSpec::new(SolverKind::PolyAllRoots);
        let req = SolveRequest {
            spec: &spec,
            kind: SolverKind::PolyAllRoots,
            tol_constraint: 1e-8,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut pairs = 0;
        while pairs < 100 {
            let x = t.point(rng.gen_range(0.0..6.28), rng.gen_range(0.0..6.28));
            let ctx = MalaContext::new(&t, &x, &pot, 0.1).unwrap();
            let v = gauss(&mut rng, 2);
            let set = solve_projection_set(&t, &ctx.instance(&v), req, &mut rng);
            for s in &set.solutions {
                assert!((ctx.forward(&v, &s.c) - &s.y).norm() < 1e-12);
                assert!((ctx.reverse_velocity(&s.y) - &v).norm() < 1e-10);
                let c = mala_multiplier_from_target(&t, &x, &s.y, 0.1, &pot).unwrap();
                assert!((ctx.forward(&ctx.reverse_velocity(&s.y), &c) - &s.y).norm() < 1e-10);
                pairs += 1;
            }
        }
    }

    fn random_torus_phase_point(t: &Torus, mass: &MassMatrix, rng: &mut ChaCha8Rng) -> PhasePoint {
        let x = t.point(rng.gen_range(0.0..6.28), rng.gen_range(0.0..6.28));
        let p = sample_cotangent_gaussian(t, &x, mass, 1.0, rng).unwrap();
        PhasePoint { x, p }
    }

    fn rattle_solutions(
        cm: &dyn ConstraintMap,
        z: &PhasePoint,
        mass: &MassMatrix,
        tau: f64,
        pot: &dyn Potential,
        kind: SolverKind,
    ) -> Vec<RattleSolution> {
        let spec = SolverSpec::new(kind);
        let req = SolveRequest {
            spec: &spec,
            kind,
            tol_constraint: 1e-8,
        };
        let ctx = RattleContext::new(cm, &z.x, &z.p, mass, tau, pot);
        solve_projection_set(cm, &ctx, req, &mut ChaCha8Rng::seed_from_u64(1)).solutions
    }

    #[test]
    fn rattle_fixed_point() {
        let t = Torus::new(1.0, 0.5);
        let x = Vector::from_vec(vec![0.5, 0.0, 0.0]);
        let z = PhasePoint { x: x.clone(), p: Vector::zeros(3) };
        let s = rattle_step(&t, &z, &Vector::zeros(1), &MassMatrix::identity(3), 0.8, &ZeroPotential).unwrap();
        assert_eq!(s.z1.x, x);
        assert!(s.z1.p.norm() == 0.0);
    }

    #[test]
    fn rattle_rejects_bad_multiplier() {
        let t = Torus::new(1.0, 0.5);
        let z = PhasePoint {
            x: Vector::from_vec(vec![0.5, 0.0, 0.0]),
            p: Vector::from_vec(vec![0.0, 1.0, 0.0]),
        };
        let err = rattle_step(&t, &z, &Vector::zeros(1), &MassMatrix::identity(3), 0.8, &ZeroPotential).unwrap_err();
        assert!(matches!(err, Error::ConstraintViolated { .. }));
    }

    #[test]
    fn rattle_time_reversal_on_builtins() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let t = Torus::new(1.0, 0.5);
        let bimodal = TorusBimodal { big_r: 1.0, small_r: 0.5 };
        let masses = [MassMatrix::identity(3), MassMatrix::from_diagonal(vec![1.0, 2.0, 0.7]).unwrap()];
        let mut checked = 0;
        while checked < 100 {
            let mass = &masses[checked % 2];
            let pot: &dyn Potential = if checked % 3 == 0 { &ZeroPotential } else { &bimodal };
            let z = random_torus_phase_point(&t, mass, &mut rng);
            for s in rattle_solutions(&t, &z, mass, 0.4, pot, SolverKind::PolyAllRoots) {
                assert!(s.residual <= 1e-8);
                assert!((t.jacobian(&s.z1.x).transpose() * mass.inv_mul(&s.z1.p)).norm() <= 1e-10);
                let back = rattle_step(&t, &s.z1, &s.lambda_p, mass, 0.4, pot).unwrap();
                assert!((&back.z1.x - &z.x).norm() < 1e-10);
                assert!((&back.z1.p - &z.p).norm() < 1e-10);
                assert!((&back.lambda_p - &s.lambda_x).norm() < 1e-10 * (1.0 + s.lambda_x.norm()));
                checked += 1;
            }
        }

        // the sphere with multistart Newton
        let mass = MassMatrix::identity(10);
        let x = Sphere9d::reference_point();
        let quad = crate::problems::FirstCoordinateQuadratic { center: 0.6 };
        for _ in 0..10 {
            let p = sample_cotangent_gaussian(&Sphere9d, &x, &mass, 1.0, &mut rng).unwrap();
            let z = PhasePoint { x: x.clone(), p };
            for s in rattle_solutions(&Sphere9d, &z, &mass, 0.5, &quad, SolverKind::NewtonMultistart) {
                let back = rattle_step(&Sphere9d, &s.z1, &s.lambda_p, &mass, 0.5, &quad).unwrap();
                assert!((&back.z1.x - &z.x).norm() < 1e-10);
                assert!((&back.z1.p - &z.p).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn rattle_inverse_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let t = Torus::new(1.0, 0.5);
        let pot = TorusBimodal { big_r: 1.0, small_r: 0.5 };
        let mass = MassMatrix::from_diagonal(vec![1.5, 0.8, 1.1]).unwrap();
        let mut checked = 0;
        while checked < 100 {
            let z = random_torus_phase_point(&t, &mass, &mut rng);
            for s in rattle_solutions(&t, &z, &mass, 0.5, &pot, SolverKind::PolyAllRoots) {
                let p = rattle_reverse_momentum(&t, &z.x, &s.z1.x, &mass, 0.5, &pot).unwrap();
                assert!((&p - &z.p).norm() < 1e-10);
                let lx = rattle_multiplier_from_target(&t, &z, &s.z1.x, &mass, 0.5, &pot).unwrap();
                assert!((&lx - &s.lambda_x).norm() < 1e-10 * (1.0 + lx.norm()));
                let again = rattle_step(&t, &z, &lx, &mass, 0.5, &pot).unwrap();
                assert!((&again.z1.x - &s.z1.x).norm() < 1e-10);
                checked += 1;
            }
        }
        // specialization with M = I and no drift
        let z = random_torus_phase_point(&t, &MassMatrix::identity(3), &mut rng);
        let x1 = t.point(1.0, 2.0);
        let p = rattle_reverse_momentum(&t, &z.x, &x1, &MassMatrix::identity(3), 0.7, &ZeroPotential).unwrap();
        let pm = projector(&t, &z.x, &MassMatrix::identity(3)).unwrap();
        assert!((p - pm * (&x1 - &z.x) / 0.7).norm() < 1e-14);
        let p0 = rattle_reverse_momentum(&t, &z.x, &z.x, &MassMatrix::identity(3), 0.7, &ZeroPotential).unwrap();
        assert_eq!(p0.norm(), 0.0);
    }
}
