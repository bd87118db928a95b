//! JSON run configuration: strict schema, defaults made explicit on resolution.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{MassMatrix, Vector};
use crate::problems::{builtin_problem, Potential, Problem, ProblemKind, ProblemParams};
use crate::rootfind::{SolverKind, SolverSpec};
use crate::sampler::{Algorithm, OmegaPolicy, SamplerConfig};

/// Which potential drives the proposal drift.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProposalPotential {
    #[default]
    Zero,
    /// Same as the target potential.
    Target,
}

fn one() -> f64 {
    1.0
}
fn tol_constraint() -> f64 {
    1e-8
}
fn reversibility_tol() -> f64 {
    1e-6
}
fn default_solver() -> SolverSpec {
    SolverSpec::new(SolverKind::NewtonSingle)
}

/// Sampler section of a run file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSection {
    pub algorithm: Algorithm,
    pub tau: f64,
    #[serde(default = "one")]
    pub beta: f64,
    #[serde(default)]
    pub alpha: f64,
    /// Diagonal of the mass matrix; identity when absent.
    #[serde(default)]
    pub mass: Option<Vec<f64>>,
    #[serde(default)]
    pub proposal_potential: ProposalPotential,
    #[serde(default = "default_solver")]
    pub solver: SolverSpec,
    #[serde(default = "OmegaPolicy::uniform")]
    pub omega: OmegaPolicy,
    #[serde(default = "tol_constraint")]
    pub tol_constraint: f64,
    #[serde(default = "reversibility_tol")]
    pub reversibility_tol: f64,
    pub n_iterations: u64,
    #[serde(default)]
    pub seed: u64,
    /// Starting position; projected onto the manifold. Problem default when absent.
    #[serde(default)]
    pub initial_point: Option<Vec<f64>>,
}

fn one_u64() -> u64 {
    1
}
fn hundred() -> u64 {
    100
}
fn default_output() -> PathBuf {
    PathBuf::from("output")
}

/// A complete run description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemKind,
    #[serde(default)]
    pub problem_params: ProblemParams,
    pub sampler: SamplerSection,
    #[serde(default)]
    pub scheme_label: String,
    #[serde(default = "one_u64")]
    pub n_chains: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// Every `record_every`-th iteration is written to the sample file.
    #[serde(default = "hundred")]
    pub record_every: u64,
}

/// A validated configuration together with the objects it describes.
#[derive(Debug, Clone)]
pub struct ResolvedRun {
    /// The configuration with every default written out.
    pub config: RunConfig,
    pub problem: Problem,
    pub sampler: SamplerConfig,
    pub initial_point: Vector,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::config("config", e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("config", format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configuration serializes")
    }

    /// Validates the configuration, builds the problem and sampler, and fills
    /// in every default so that the echoed configuration is self-contained.
    pub fn resolve(&self) -> Result<ResolvedRun> {
        let mut config = self.clone();
        if config.n_chains == 0 {
            return Err(Error::config("n_chains", "must be >= 1"));
        }
        if config.record_every == 0 {
            return Err(Error::config("record_every", "must be >= 1"));
        }
        let problem = builtin_problem(config.problem, &config.problem_params)?;
        let cm = problem.constraint.as_ref();
        let dim = cm.ambient_dim();
        let s = &mut config.sampler;

        let mass = match &s.mass {
            None => MassMatrix::identity(dim),
            Some(diag) if diag.len() != dim => {
                return Err(Error::config(
                    "sampler.mass",
                    format!("expected {dim} diagonal entries, found {}", diag.len()),
                ))
            }
            Some(diag) => MassMatrix::from_diagonal(diag.clone())
                .map_err(|e| Error::config("sampler.mass", e.to_string()))?,
        };
        s.mass = Some(mass.diagonal().iter().copied().collect());
        if s.solver.start_scale.is_none() {
            s.solver.start_scale = Some(2.0 * (dim as f64).sqrt());
        }
        if config.problem_params.potential.is_none() {
            config.problem_params.potential = Some(problem.potential_kind);
        }

        let initial = match (&s.initial_point, &problem.default_start) {
            (Some(p), _) => Vector::from_vec(p.clone()),
            (None, Some(p)) => p.clone(),
            (None, None) => return Err(Error::MissingParam("sampler.initial_point".into())),
        };
        if initial.len() != dim {
            return Err(Error::config(
                "sampler.initial_point",
                format!("expected {dim} coordinates, found {}", initial.len()),
            ));
        }
        s.initial_point = Some(initial.iter().copied().collect());

        let proposal_potential: Arc<dyn Potential> = match s.proposal_potential {
            ProposalPotential::Zero => Arc::new(crate::problems::ZeroPotential),
            ProposalPotential::Target => problem.potential.clone(),
        };
        let sampler = SamplerConfig {
            algorithm: s.algorithm,
            tau: s.tau,
            beta: s.beta,
            alpha: s.alpha,
            mass,
            potential: problem.potential.clone(),
            proposal_potential,
            solver: s.solver.clone(),
            omega: s.omega.clone(),
            tol_constraint: s.tol_constraint,
            reversibility_tol: s.reversibility_tol,
            n_iterations: s.n_iterations,
            seed: s.seed,
        };
        sampler.validate()?;
        if sampler.solver.kind == SolverKind::PolyAllRoots && cm.poly_degree().is_none() {
            return Err(Error::config(
                "sampler.solver.kind",
                "poly_all_roots needs a problem with polynomial structure",
            ));
        }
        if sampler.algorithm == Algorithm::Mala && sampler.alpha != 0.0 {
            log::warn!("sampler.alpha has no effect with the mala algorithm");
        }
        Ok(ResolvedRun {
            config,
            problem,
            sampler,
            initial_point: initial,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TORUS: &str = r#"{
        "problem": "torus",
        "problem_params": {"R": 1.0, "r": 0.5},
        "sampler": {"algorithm": "hmc", "tau": 0.8, "n_iterations": 10}
    }"#;

    #[test]
    fn defaults_are_written_back() {
        let cfg = RunConfig::from_json(TORUS).unwrap();
        let run = cfg.resolve().unwrap();
        let echoed = &run.config;
        assert_eq!(echoed.sampler.mass, Some(vec![1.0; 3]));
        assert_eq!(echoed.sampler.initial_point, Some(vec![0.5, 0.0, 0.0]));
        assert_eq!(echoed.sampler.reversibility_tol, 1e-6);
        assert_eq!(echoed.record_every, 100);
        let reparsed = RunConfig::from_json(&echoed.to_json()).unwrap();
        assert_eq!(&reparsed, echoed);
        // resolution is idempotent
        assert_eq!(&reparsed.resolve().unwrap().config, echoed);
    }

    #[test]
    fn schema_violations_name_the_field() {
        let bad_alpha = TORUS.replace("\"tau\": 0.8", "\"tau\": 0.8, \"alpha\": 1.0");
        let err = RunConfig::from_json(&bad_alpha).unwrap().resolve().unwrap_err();
        assert!(err.to_string().contains("sampler.alpha"), "{err}");

        let unknown = TORUS.replace("\"tau\": 0.8", "\"tau\": 0.8, \"gamma\": 1.0");
        let err = RunConfig::from_json(&unknown).unwrap_err();
        assert!(err.to_string().contains("gamma"), "{err}");

        let bad_mass = TORUS.replace("\"tau\": 0.8", "\"tau\": 0.8, \"mass\": [1.0, 2.0]");
        let err = RunConfig::from_json(&bad_mass).unwrap().resolve().unwrap_err();
        assert!(err.to_string().contains("sampler.mass"), "{err}");

        let sphere_poly = r#"{"problem": "sphere9d",
            "sampler": {"algorithm": "hmc", "tau": 0.5, "n_iterations": 1,
                        "solver": {"kind": "poly_all_roots"}}}"#;
        let err = RunConfig::from_json(sphere_poly).unwrap().resolve().unwrap_err();
        assert!(err.to_string().contains("sampler.solver.kind"), "{err}");
    }
}
