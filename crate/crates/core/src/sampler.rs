//! Multiple-projection MALA on the manifold and multiple-projection HMC on
//! its cotangent bundle.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{ChainStats, IterationRecord, Stage};
use crate::error::{Error, Result};
use crate::geometry::{
    check_regular, project_cotangent_with, sample_cotangent_gaussian, ConstraintMap, MassMatrix, PhasePoint, Vector,
};
use crate::problems::{ComponentTracker, Potential};
use crate::projection::{MalaContext, MalaInstance, RattleContext};
use crate::rng::ChainStreams;
use crate::rootfind::{newton_solve, solve_projection_set, ProjectionInstance, ProposalSet, SolveRequest, SolverKind, SolverSpec};

/// Tolerance on multiplier agreement before a matched backward solution is
/// counted as a mismatch.
const MULTIPLIER_MATCH_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Mala,
    Hmc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OmegaKind {
    Uniform,
    Ranked,
}

/// How one element of a distance-sorted proposal set is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OmegaPolicy {
    pub kind: OmegaKind,
    /// Row `n` gives the probabilities of the `n` solutions, nearest first.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub rank_table: BTreeMap<usize, Vec<f64>>,
}

impl OmegaPolicy {
    pub fn uniform() -> Self {
        Self {
            kind: OmegaKind::Uniform,
            rank_table: BTreeMap::new(),
        }
    }

    /// Ranked policy favouring distant solutions.
    pub fn ranked_far() -> Self {
        let rank_table = BTreeMap::from([
            (1, vec![1.0]),
            (2, vec![0.4, 0.6]),
            (3, vec![0.2, 0.4, 0.4]),
            (4, vec![0.2, 0.3, 0.3, 0.2]),
        ]);
        Self {
            kind: OmegaKind::Ranked,
            rank_table,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == OmegaKind::Ranked && self.rank_table.is_empty() {
            return Err(Error::config("sampler.omega.rank_table", "ranked policy needs at least one row"));
        }
        for (n, row) in &self.rank_table {
            let field = || format!("sampler.omega.rank_table.{n}");
            if row.len() != *n {
                return Err(Error::config(field(), format!("row must have {n} entries")));
            }
            if row.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
                return Err(Error::config(field(), "entries must be > 0"));
            }
            if (row.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                return Err(Error::config(field(), "entries must sum to 1"));
            }
        }
        Ok(())
    }

    /// Strict lookup: the probabilities for a set of `n` elements.
    pub fn weights(&self, n: usize) -> Result<Vec<f64>> {
        match self.kind {
            OmegaKind::Uniform => Ok(vec![1.0 / n as f64; n]),
            OmegaKind::Ranked => self.rank_table.get(&n).cloned().ok_or(Error::RankTableMissing { n }),
        }
    }

    /// Probabilities for `n` elements with the uniform fallback; the flag
    /// reports whether the fallback was used.
    pub fn weights_or_uniform(&self, n: usize) -> (Vec<f64>, bool) {
        match self.weights(n) {
            Ok(w) => (w, false),
            Err(e) => {
                log::debug!("{e}; using uniform weights");
                (vec![1.0 / n as f64; n], true)
            }
        }
    }
}

/// Draws an index from the policy. Returns the index, its probability and
/// whether the uniform fallback was used.
pub fn select_proposal<S, R: Rng + ?Sized>(
    set: &ProposalSet<S>,
    omega: &OmegaPolicy,
    rng: &mut R,
) -> Result<(usize, f64, bool)> {
    let n = set.len();
    if n == 0 {
        return Err(Error::config("proposal set", "cannot select from an empty set"));
    }
    let (w, fallback) = omega.weights_or_uniform(n);
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, wi) in w.iter().enumerate() {
        acc += wi;
        if u < acc {
            return Ok((i, *wi, fallback));
        }
    }
    Ok((n - 1, w[n - 1], fallback))
}

/// Probability the policy gives to element `index` of an `n`-element set.
pub fn omega_of(n: usize, index: usize, omega: &OmegaPolicy) -> (f64, bool) {
    let (w, fallback) = omega.weights_or_uniform(n);
    (w[index], fallback)
}

fn default_tol() -> f64 {
    1e-8
}
fn default_rev_tol() -> f64 {
    1e-6
}

/// Everything one chain needs, with the potentials already resolved.
#[derive(Debug, Clone)]
pub struct SamplerConfig {
    pub algorithm: Algorithm,
    pub tau: f64,
    pub beta: f64,
    pub alpha: f64,
    pub mass: MassMatrix,
    pub potential: Arc<dyn Potential>,
    pub proposal_potential: Arc<dyn Potential>,
    pub solver: SolverSpec,
    pub omega: OmegaPolicy,
    pub tol_constraint: f64,
    pub reversibility_tol: f64,
    pub n_iterations: u64,
    pub seed: u64,
}

impl SamplerConfig {
    /// Defaults: HMC, `beta = 1`, `alpha = 0`, unit mass, zero potentials,
    /// single-start Newton, uniform selection.
    pub fn new(dim: usize, tau: f64) -> Self {
        Self {
            algorithm: Algorithm::Hmc,
            tau,
            beta: 1.0,
            alpha: 0.0,
            mass: MassMatrix::identity(dim),
            potential: Arc::new(crate::problems::ZeroPotential),
            proposal_potential: Arc::new(crate::problems::ZeroPotential),
            solver: SolverSpec::new(SolverKind::NewtonSingle),
            omega: OmegaPolicy::uniform(),
            tol_constraint: default_tol(),
            reversibility_tol: default_rev_tol(),
            n_iterations: 0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::config("sampler.tau", "must be finite and > 0"));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::config("sampler.beta", "must be finite and > 0"));
        }
        if !(self.alpha.abs() < 1.0) {
            return Err(Error::config("sampler.alpha", "must satisfy |alpha| < 1"));
        }
        if !(self.tol_constraint > 0.0) {
            return Err(Error::config("sampler.tol_constraint", "must be > 0"));
        }
        if !(self.reversibility_tol > self.solver.newton_tol) {
            return Err(Error::config(
                "sampler.reversibility_tol",
                "must exceed sampler.solver.newton_tol",
            ));
        }
        self.solver.validate()?;
        self.omega.validate()
    }
}

/// State carried between iterations.
#[derive(Debug, Clone, PartialEq)]
pub enum ChainState {
    Position(Vector),
    Phase(PhasePoint),
}

impl ChainState {
    pub fn position(&self) -> &Vector {
        match self {
            ChainState::Position(x) => x,
            ChainState::Phase(z) => &z.x,
        }
    }
}

/// Receives every iteration record of one chain.
pub trait RecordSink {
    fn record(&mut self, rec: &IterationRecord) -> Result<()>;
}

impl RecordSink for () {
    fn record(&mut self, _rec: &IterationRecord) -> Result<()> {
        Ok(())
    }
}

impl RecordSink for Vec<IterationRecord> {
    fn record(&mut self, rec: &IterationRecord) -> Result<()> {
        self.push(rec.clone());
        Ok(())
    }
}

impl<F: FnMut(&IterationRecord)> RecordSink for F {
    fn record(&mut self, rec: &IterationRecord) -> Result<()> {
        self(rec);
        Ok(())
    }
}

/// Diagnostic side-counts produced by one iteration.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IterationFlags {
    pub unmatched_autopass: bool,
    pub multiplier_mismatch: bool,
    pub omega_fallback: bool,
}

/// Everything one iteration produced.
#[derive(Debug, Clone)]
pub struct Step<S> {
    pub state: S,
    pub record: IterationRecord,
    pub flags: IterationFlags,
}

/// Locates `x` in the backward set. Under the all-roots solver membership is
/// guaranteed in exact arithmetic; a numerically missing match is inserted at
/// its distance rank so that the set size and rank used by the policy are
/// those of the exact set.
struct BackwardMatch {
    index: usize,
    len: usize,
    matched: bool,
    passed: bool,
}

fn match_backward<I: ProjectionInstance>(
    inst: &I,
    set: &ProposalSet<I::Solution>,
    target: &Vector,
    rev_tol: f64,
    autopass: bool,
) -> BackwardMatch {
    let nearest = set
        .solutions
        .iter()
        .enumerate()
        .map(|(i, s)| (i, (I::position(s) - target).norm()))
        .min_by(|a, b| a.1.total_cmp(&b.1));
    match nearest {
        Some((i, d)) if d <= rev_tol => BackwardMatch {
            index: i,
            len: set.len(),
            matched: true,
            passed: true,
        },
        _ if autopass => {
            let origin = inst.origin();
            let dt = (target - origin).norm();
            let index = set
                .solutions
                .iter()
                .take_while(|s| (I::position(s) - origin).norm() < dt)
                .count();
            BackwardMatch {
                index,
                len: set.len() + 1,
                matched: false,
                passed: true,
            }
        }
        _ => BackwardMatch {
            index: 0,
            len: set.len(),
            matched: false,
            passed: false,
        },
    }
}

fn request(cfg: &SamplerConfig, kind: SolverKind) -> SolveRequest<'_> {
    SolveRequest {
        spec: &cfg.solver,
        kind,
        tol_constraint: cfg.tol_constraint,
    }
}

fn metropolis(rng: &mut ChaCha8Rng, log_ratio: f64) -> bool {
    let u: f64 = rng.gen();
    log_ratio >= 0.0 || u < log_ratio.exp()
}

/// One iteration of multiple-projection MALA from `x`.
pub fn mala_iteration(
    cfg: &SamplerConfig,
    cm: &dyn ConstraintMap,
    x: &Vector,
    streams: &mut ChainStreams,
    iter: u64,
) -> Result<Step<Vector>> {
    let kind = cfg.solver.kind_at(iter);
    let expensive = cfg.solver.is_expensive_at(iter);
    let vbar = cfg.proposal_potential.as_ref();
    let ctx = MalaContext::new(cm, x, vbar, cfg.tau)?;
    let dof = x.len() - cm.codim();
    let scale = cfg.beta.sqrt().recip();
    let v = Vector::from_fn(dof, |_, _| scale * streams.velocity.sample::<f64, _>(StandardNormal));

    let mut flags = IterationFlags::default();
    let stay = |stage, n_forward, n_backward| IterationRecord {
        iter,
        x: x.clone(),
        accepted: false,
        n_forward,
        n_backward,
        jump_distance: 0.0,
        stage,
        expensive,
    };

    let forward_inst = ctx.instance(&v);
    let forward = solve_projection_set(cm, &forward_inst, request(cfg, kind), &mut streams.multistart(iter, 0));
    if forward.is_empty() {
        return Ok(Step {
            state: x.clone(),
            record: stay(Stage::NoSolution, 0, None),
            flags,
        });
    }
    let (j, w_forward, fb) = select_proposal(&forward, &cfg.omega, &mut streams.selection)?;
    flags.omega_fallback |= fb;
    let y = forward.solutions[j].y.clone();

    let back_ctx = MalaContext::new(cm, &y, vbar, cfg.tau)?;
    let v_back = back_ctx.reverse_velocity(x);
    let back_inst: MalaInstance<'_> = back_ctx.instance(&v_back);
    let backward = solve_projection_set(cm, &back_inst, request(cfg, kind), &mut streams.multistart(iter, 1));
    let m = match_backward(
        &back_inst,
        &backward,
        x,
        cfg.reversibility_tol,
        kind == SolverKind::PolyAllRoots,
    );
    flags.unmatched_autopass = m.passed && !m.matched;
    if !m.passed {
        return Ok(Step {
            state: x.clone(),
            record: stay(Stage::ReversibilityFailed, forward.len(), Some(backward.len())),
            flags,
        });
    }
    if m.matched {
        let recovered = back_ctx.multiplier_from_target(x)?;
        flags.multiplier_mismatch = (&backward.solutions[m.index].c - recovered).norm() > MULTIPLIER_MATCH_TOL;
    }
    let (w_backward, fb) = omega_of(m.len, m.index, &cfg.omega);
    flags.omega_fallback |= fb;

    let pot = cfg.potential.as_ref();
    let energy_new = pot.value(&y) + 0.5 * v_back.norm_squared();
    let energy_old = pot.value(x) + 0.5 * v.norm_squared();
    let log_ratio = (w_backward / w_forward).ln() - cfg.beta * (energy_new - energy_old);
    if !metropolis(&mut streams.metropolis, log_ratio) {
        return Ok(Step {
            state: x.clone(),
            record: stay(Stage::MhRejected, forward.len(), Some(m.len)),
            flags,
        });
    }
    let jump_distance = (&y - x).norm();
    Ok(Step {
        record: IterationRecord {
            iter,
            x: y.clone(),
            accepted: true,
            n_forward: forward.len(),
            n_backward: Some(m.len),
            jump_distance,
            stage: Stage::Accepted,
            expensive,
        },
        state: y,
        flags,
    })
}

/// `p <- alpha p + sqrt((1 - alpha^2) / beta) P_M(x) w`, `w ~ N(0, M)`.
pub fn hmc_momentum_update<R: Rng + ?Sized>(
    cfg: &SamplerConfig,
    cm: &dyn ConstraintMap,
    z: &PhasePoint,
    rng: &mut R,
) -> Result<PhasePoint> {
    let jac = cm.jacobian(&z.x);
    let d = z.x.len();
    let w = Vector::from_fn(d, |i, _| {
        let g: f64 = rng.sample(StandardNormal);
        g * cfg.mass.diagonal()[i].sqrt()
    });
    let eta = project_cotangent_with(&jac, &cfg.mass, &w)?;
    let noise = ((1.0 - cfg.alpha * cfg.alpha) / cfg.beta).sqrt();
    let p = if cfg.alpha == 0.0 {
        eta * noise
    } else {
        &z.p * cfg.alpha + eta * noise
    };
    Ok(PhasePoint { x: z.x.clone(), p })
}

fn hamiltonian(cfg: &SamplerConfig, z: &PhasePoint) -> f64 {
    cfg.potential.value(&z.x) + 0.5 * cfg.mass.inv_quad(&z.p)
}

/// One iteration of multiple-projection HMC from `z`.
pub fn hmc_iteration(
    cfg: &SamplerConfig,
    cm: &dyn ConstraintMap,
    z: &PhasePoint,
    streams: &mut ChainStreams,
    iter: u64,
) -> Result<Step<PhasePoint>> {
    let kind = cfg.solver.kind_at(iter);
    let expensive = cfg.solver.is_expensive_at(iter);
    let vbar = cfg.proposal_potential.as_ref();
    let mut flags = IterationFlags::default();

    let z = hmc_momentum_update(cfg, cm, z, &mut streams.velocity)?;
    let ctx = RattleContext::new(cm, &z.x, &z.p, &cfg.mass, cfg.tau, vbar);
    let forward = solve_projection_set(cm, &ctx, request(cfg, kind), &mut streams.multistart(iter, 0));

    let (next, stage, n_backward, jump_distance) = if forward.is_empty() {
        (z.clone(), Stage::NoSolution, None, 0.0)
    } else {
        let (j, w_forward, fb) = select_proposal(&forward, &cfg.omega, &mut streams.selection)?;
        flags.omega_fallback |= fb;
        let proposal = forward.solutions[j].z1.clone();
        let back_ctx = RattleContext::new(cm, &proposal.x, &proposal.p, &cfg.mass, cfg.tau, vbar);
        let backward = solve_projection_set(cm, &back_ctx, request(cfg, kind), &mut streams.multistart(iter, 1));
        let m = match_backward(
            &back_ctx,
            &backward,
            &z.x,
            cfg.reversibility_tol,
            kind == SolverKind::PolyAllRoots,
        );
        flags.unmatched_autopass = m.passed && !m.matched;
        if !m.passed {
            (z.clone(), Stage::ReversibilityFailed, Some(backward.len()), 0.0)
        } else {
            if m.matched {
                let recovered = back_ctx.multiplier_from_target(&z.x)?;
                flags.multiplier_mismatch =
                    (&backward.solutions[m.index].lambda_x - recovered).norm() > MULTIPLIER_MATCH_TOL;
            }
            let (w_backward, fb) = omega_of(m.len, m.index, &cfg.omega);
            flags.omega_fallback |= fb;
            let log_ratio = (w_backward / w_forward).ln() - cfg.beta * (hamiltonian(cfg, &proposal) - hamiltonian(cfg, &z));
            if metropolis(&mut streams.metropolis, log_ratio) {
                let jump = (&proposal.x - &z.x).norm();
                (proposal, Stage::Accepted, Some(m.len), jump)
            } else {
                (z.clone(), Stage::MhRejected, Some(m.len), 0.0)
            }
        }
    };

    let reversed = next.reversed();
    let state = hmc_momentum_update(cfg, cm, &reversed, &mut streams.velocity)?;
    Ok(Step {
        record: IterationRecord {
            iter,
            x: state.x.clone(),
            accepted: stage == Stage::Accepted,
            n_forward: forward.len(),
            n_backward,
            jump_distance,
            stage,
            expensive,
        },
        state,
        flags,
    })
}

/// Projects `x` onto the manifold along `grad xi(x)` with up to 50 Newton
/// steps.
pub fn project_to_manifold(cm: &dyn ConstraintMap, x: &Vector, tol: f64) -> Result<Vector> {
    let residual = cm.eval(x).norm();
    if residual <= tol {
        return Ok(x.clone());
    }
    check_regular(cm, x)?;
    let jac = cm.jacobian(x);
    let line = |c: &Vector| x + &jac * c;
    newton_solve(
        |c| cm.eval(&line(c)),
        |c| cm.jacobian(&line(c)).transpose() * &jac,
        &Vector::zeros(cm.codim()),
        50,
        tol,
    )
    .map(|c| line(&c))
    .ok_or(Error::ConstraintViolated { residual, tol })
}

/// Result of a completed chain.
#[derive(Debug, Clone)]
pub struct ChainOutcome {
    pub stats: ChainStats,
    pub final_state: ChainState,
}

/// Validates or completes the initial state: the position must lie on the
/// manifold; for HMC a missing momentum is drawn from the stationary law.
pub fn initial_state(
    cfg: &SamplerConfig,
    cm: &dyn ConstraintMap,
    x0: &Vector,
    p0: Option<&Vector>,
    streams: &mut ChainStreams,
) -> Result<ChainState> {
    if x0.len() != cm.ambient_dim() {
        return Err(Error::config(
            "initial_point",
            format!("expected {} coordinates, found {}", cm.ambient_dim(), x0.len()),
        ));
    }
    let x = project_to_manifold(cm, x0, cfg.tol_constraint)?;
    check_regular(cm, &x)?;
    match cfg.algorithm {
        Algorithm::Mala => Ok(ChainState::Position(x)),
        Algorithm::Hmc => {
            let p = match p0 {
                Some(p) => p.clone(),
                None => sample_cotangent_gaussian(cm, &x, &cfg.mass, cfg.beta, &mut streams.initial)?,
            };
            let z = PhasePoint::new(cm, &cfg.mass, x, p, cfg.tol_constraint)?;
            Ok(ChainState::Phase(z))
        }
    }
}

fn abort(iteration: u64) -> impl Fn(Error) -> Error {
    move |e| Error::ChainAbort {
        iteration,
        source: Box::new(e),
    }
}

/// A chain that can be advanced incrementally. The constraint map is passed
/// to every call and must be the one the chain was created with.
#[derive(Debug, Clone)]
pub struct Chain {
    cfg: SamplerConfig,
    tracker: Option<ComponentTracker>,
    streams: ChainStreams,
    state: ChainState,
    stats: ChainStats,
    component: Option<usize>,
    next_iter: u64,
}

impl Chain {
    pub fn new(
        cfg: SamplerConfig,
        cm: &dyn ConstraintMap,
        tracker: Option<ComponentTracker>,
        init: ChainState,
        chain: u64,
    ) -> Result<Self> {
        let component = match tracker {
            Some(t) => Some(t.classify(init.position()).map_err(abort(0))?),
            None => None,
        };
        if init.position().len() != cm.ambient_dim() {
            return Err(Error::config("initial_point", "dimension does not match the problem"));
        }
        Ok(Self {
            streams: ChainStreams::new(cfg.seed, chain),
            cfg,
            tracker,
            state: init,
            stats: ChainStats::default(),
            component,
            next_iter: 0,
        })
    }

    /// Performs one iteration and returns its record.
    pub fn step(&mut self, cm: &dyn ConstraintMap) -> Result<IterationRecord> {
        let iter = self.next_iter;
        let cfg = &self.cfg;
        let (next, record, flags) = match &self.state {
            ChainState::Position(x) => {
                let s = mala_iteration(cfg, cm, x, &mut self.streams, iter).map_err(abort(iter))?;
                (ChainState::Position(s.state), s.record, s.flags)
            }
            ChainState::Phase(z) => {
                let s = hmc_iteration(cfg, cm, z, &mut self.streams, iter).map_err(abort(iter))?;
                (ChainState::Phase(s.state), s.record, s.flags)
            }
        };
        let comps = match (self.tracker, self.component) {
            (Some(t), Some(prev)) => {
                let now = t.classify(&record.x).map_err(abort(iter))?;
                Some((prev, now))
            }
            _ => None,
        };
        let stats = &mut self.stats;
        stats.observe(self.state.position(), &record, comps);
        stats.n_unmatched_autopass += u64::from(flags.unmatched_autopass);
        stats.n_multiplier_mismatch += u64::from(flags.multiplier_mismatch);
        stats.n_omega_fallback += u64::from(flags.omega_fallback);
        if let Some((_, now)) = comps {
            self.component = Some(now);
        }
        self.state = next;
        self.next_iter += 1;
        Ok(record)
    }

    /// Performs `n` iterations, streaming records to `sink`.
    pub fn run(&mut self, cm: &dyn ConstraintMap, n: u64, sink: &mut dyn RecordSink) -> Result<()> {
        let start = Instant::now();
        let result = (0..n).try_for_each(|_| {
            let rec = self.step(cm)?;
            sink.record(&rec).map_err(abort(rec.iter))
        });
        self.stats.wall_time_seconds += start.elapsed().as_secs_f64();
        result
    }

    pub fn state(&self) -> &ChainState {
        &self.state
    }

    pub fn stats(&self) -> &ChainStats {
        &self.stats
    }

    pub fn iterations_done(&self) -> u64 {
        self.next_iter
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.cfg
    }

    pub fn into_outcome(self) -> ChainOutcome {
        ChainOutcome {
            stats: self.stats,
            final_state: self.state,
        }
    }
}

/// Runs `cfg.n_iterations` iterations of chain `chain` from `init`, streaming
/// records to `sink`.
pub fn run_chain(
    cfg: &SamplerConfig,
    cm: &dyn ConstraintMap,
    tracker: Option<ComponentTracker>,
    init: ChainState,
    chain: u64,
    sink: &mut dyn RecordSink,
) -> Result<ChainOutcome> {
    let mut c = Chain::new(cfg.clone(), cm, tracker, init, chain)?;
    c.run(cm, cfg.n_iterations, sink)?;
    Ok(c.into_outcome())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::cotangent_projector;
    use crate::problems::{Circle, Torus};
    use rand::SeedableRng;

    fn torus_cfg(kind: SolverKind, n: u64) -> SamplerConfig {
        let mut cfg = SamplerConfig::new(3, 0.8);
        cfg.solver = SolverSpec::new(kind);
        cfg.n_iterations = n;
        cfg.seed = 42;
        cfg
    }

    #[test]
    fn omega_tables() {
        let set = ProposalSet {
            solutions: vec![(); 4],
            solver: SolverKind::PolyAllRoots,
        };
        let uniform = OmegaPolicy::uniform();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (_, w, _) = select_proposal(&set, &uniform, &mut rng).unwrap();
        assert_eq!(w, 0.25);
        assert_eq!(omega_of(3, 2, &uniform).0, 1.0 / 3.0);
        let ranked = OmegaPolicy::ranked_far();
        ranked.validate().unwrap();
        assert_eq!(ranked.weights(2).unwrap(), vec![0.4, 0.6]);
        assert_eq!(ranked.weights(1).unwrap(), vec![1.0]);
        assert_eq!(omega_of(4, 1, &ranked).0, 0.3);
        assert_eq!(omega_of(3, 2, &ranked).0, 0.4);
        assert!(matches!(ranked.weights(5), Err(Error::RankTableMissing { n: 5 })));
        assert_eq!(omega_of(5, 0, &ranked), (0.2, true));

        // empirical frequencies of the n = 2 row
        let two = ProposalSet {
            solutions: vec![(); 2],
            solver: SolverKind::PolyAllRoots,
        };
        let far = (0..100_000)
            .filter(|_| select_proposal(&two, &ranked, &mut rng).unwrap().0 == 1)
            .count();
        assert!((far as f64 / 1e5 - 0.6).abs() < 0.005);
    }

    #[test]
    fn config_validation() {
        let mut cfg = torus_cfg(SolverKind::NewtonSingle, 1);
        cfg.alpha = 1.0;
        assert!(matches!(cfg.validate(), Err(Error::InvalidConfig { ref field, .. }) if field == "sampler.alpha"));
        let mut cfg = torus_cfg(SolverKind::NewtonSingle, 1);
        cfg.reversibility_tol = 1e-9;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn stepping_matches_a_single_run() {
        let t = Torus::new(1.0, 0.5);
        let mut cfg = torus_cfg(SolverKind::PolyAllRoots, 200);
        cfg.solver.period = 7;
        let mut streams = ChainStreams::new(cfg.seed, 2);
        let init = initial_state(&cfg, &t, &t.start_point(), None, &mut streams).unwrap();
        let whole = run_chain(&cfg, &t, None, init.clone(), 2, &mut ()).unwrap();
        let mut chain = Chain::new(cfg, &t, None, init, 2).unwrap();
        chain.run(&t, 50, &mut ()).unwrap();
        chain.run(&t, 150, &mut ()).unwrap();
        assert_eq!(chain.iterations_done(), 200);
        let mut a = chain.stats().clone();
        let mut b = whole.stats.clone();
        a.wall_time_seconds = 0.0;
        b.wall_time_seconds = 0.0;
        assert_eq!(a, b);
        assert_eq!(chain.state(), &whole.final_state);
    }

    #[test]
    fn zero_iterations_returns_initial_state() {
        let cfg = torus_cfg(SolverKind::NewtonSingle, 0);
        let t = Torus::new(1.0, 0.5);
        let mut streams = ChainStreams::new(cfg.seed, 0);
        let init = initial_state(&cfg, &t, &t.start_point(), None, &mut streams).unwrap();
        let out = run_chain(&cfg, &t, None, init.clone(), 0, &mut ()).unwrap();
        assert_eq!(out.final_state, init);
        assert_eq!(out.stats.n_total, 0);
    }

    #[test]
    fn runs_are_deterministic() {
        let t = Torus::new(1.0, 0.5);
        for algorithm in [Algorithm::Mala, Algorithm::Hmc] {
            for kind in [SolverKind::NewtonSingle, SolverKind::PolyAllRoots, SolverKind::NewtonMultistart] {
                let mut cfg = torus_cfg(kind, 300);
                cfg.solver.n_starts = 4;
                cfg.algorithm = algorithm;
                let run = || {
                    let mut streams = ChainStreams::new(cfg.seed, 1);
                    let init = initial_state(&cfg, &t, &t.start_point(), None, &mut streams).unwrap();
                    let mut recs: Vec<IterationRecord> = Vec::new();
                    run_chain(&cfg, &t, None, init, 1, &mut recs).unwrap();
                    recs
                };
                assert_eq!(run(), run());
            }
        }
    }

    #[test]
    fn records_satisfy_invariants() {
        let t = Torus::new(1.0, 0.5);
        for algorithm in [Algorithm::Mala, Algorithm::Hmc] {
            let mut cfg = torus_cfg(SolverKind::PolyAllRoots, 2000);
            cfg.algorithm = algorithm;
            cfg.solver.period = 3;
            cfg.omega = OmegaPolicy::ranked_far();
            let mut streams = ChainStreams::new(cfg.seed, 0);
            let init = initial_state(&cfg, &t, &t.start_point(), None, &mut streams).unwrap();
            let mut prev = init.position().clone();
            let mut check = |r: &IterationRecord| {
                assert!(t.eval(&r.x).norm() <= 1e-8);
                assert_eq!(r.stage == Stage::NoSolution, r.n_forward == 0);
                assert_eq!(r.stage == Stage::NoSolution, r.n_backward.is_none());
                if r.stage != Stage::Accepted {
                    // rejected moves keep the position bit for bit
                    assert_eq!(r.x, prev);
                    assert_eq!(r.jump_distance, 0.0);
                } else {
                    assert!(r.jump_distance > 0.0);
                }
                prev = r.x.clone();
            };
            let out = run_chain(&cfg, &t, None, init, 0, &mut check).unwrap();
            let s = &out.stats;
            assert!(s.n_reversibility_passed <= s.n_reversibility_invoked);
            assert!(s.n_accepted_moves <= s.n_reversibility_passed);
            if let ChainState::Phase(z) = &out.final_state {
                assert!((t.jacobian(&z.x).transpose() * &z.p).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn all_roots_backward_check_always_passes() {
        let t = Torus::new(1.0, 0.5);
        let cfg = torus_cfg(SolverKind::PolyAllRoots, 3000);
        let mut streams = ChainStreams::new(cfg.seed, 0);
        let init = initial_state(&cfg, &t, &t.start_point(), None, &mut streams).unwrap();
        let out = run_chain(&cfg, &t, None, init, 0, &mut ()).unwrap();
        assert_eq!(out.stats.n_reversibility_passed, out.stats.n_reversibility_invoked);
        assert!(out.stats.n_reversibility_invoked > 0);
    }

    #[test]
    fn momentum_update_is_tangent_and_stationary() {
        let t = Torus::new(1.0, 0.5);
        let x = t.point(0.3, 1.2);
        for alpha in [0.0, 0.7] {
            let mut cfg = torus_cfg(SolverKind::NewtonSingle, 0);
            cfg.alpha = alpha;
            cfg.beta = 2.0;
            cfg.mass = MassMatrix::from_diagonal(vec![1.0, 2.0, 0.5]).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(12);
            let mut cov = crate::geometry::Matrix::zeros(3, 3);
            let n = 100_000;
            let mut z = PhasePoint {
                x: x.clone(),
                p: sample_cotangent_gaussian(&t, &x, &cfg.mass, cfg.beta, &mut rng).unwrap(),
            };
            for _ in 0..n {
                z = hmc_momentum_update(&cfg, &t, &z, &mut rng).unwrap();
                assert!((t.jacobian(&x).transpose() * cfg.mass.inv_mul(&z.p)).norm() < 1e-10);
                cov += &z.p * z.p.transpose();
            }
            cov /= n as f64;
            let pm = cotangent_projector(&t, &x, &cfg.mass).unwrap();
            let expected = &pm * crate::geometry::Matrix::from_diagonal(cfg.mass.diagonal()) * pm.transpose() / cfg.beta;
            let scale = expected.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            for (c, e) in cov.iter().zip(expected.iter()) {
                assert!((c - e).abs() <= 0.05 * e.abs().max(0.1 * scale), "alpha {alpha}: {c} vs {e}");
            }
        }
    }

    #[test]
    fn circle_mala_without_drift_accepts_symmetric_moves() {
        // V = Vbar = 0 on the circle with the all-roots solver: both sets have
        // two points and |v| = |v'|, so every check that passes is accepted.
        let mut cfg = SamplerConfig::new(2, 0.5);
        cfg.algorithm = Algorithm::Mala;
        cfg.solver = SolverSpec::new(SolverKind::PolyAllRoots);
        cfg.n_iterations = 5000;
        let mut streams = ChainStreams::new(0, 0);
        let init = initial_state(&cfg, &Circle, &Vector::from_vec(vec![0.0, 1.0]), None, &mut streams).unwrap();
        let mut recs: Vec<IterationRecord> = Vec::new();
        run_chain(&cfg, &Circle, None, init, 0, &mut recs).unwrap();
        for r in &recs {
            if r.n_forward > 0 && r.n_backward == Some(r.n_forward) {
                assert_eq!(r.stage, Stage::Accepted);
            }
        }
    }

    #[test]
    fn projection_of_initial_point() {
        let t = Torus::new(1.0, 0.5);
        let x = project_to_manifold(&t, &Vector::from_vec(vec![1.4, 0.2, 0.1]), 1e-8).unwrap();
        assert!(t.eval(&x).norm() <= 1e-8);
        assert!(project_to_manifold(&Circle, &Vector::zeros(2), 1e-8).is_err());
    }
}
