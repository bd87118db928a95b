//! Chain statistics, torus and sphere observables, goodness-of-fit tests.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma_ur;

use crate::error::{Error, Result};
use crate::geometry::Vector;

const TWO_PI: f64 = 2.0 * PI;

/// Outcome of one iteration, in order of how far it progressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    NoSolution,
    ReversibilityFailed,
    MhRejected,
    Accepted,
}

impl Stage {
    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::NoSolution => "no_solution",
            Stage::ReversibilityFailed => "reversibility_failed",
            Stage::MhRejected => "mh_rejected",
            Stage::Accepted => "accepted",
        }
    }
}

/// Per-iteration record streamed to sinks.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iter: u64,
    /// Position after the iteration.
    pub x: Vector,
    pub accepted: bool,
    pub n_forward: usize,
    /// Size of the backward set, `None` when the check was not invoked.
    pub n_backward: Option<usize>,
    pub jump_distance: f64,
    pub stage: Stage,
    /// The iteration used the configured solver rather than the single-start fallback.
    pub expensive: bool,
}

/// Counters accumulated over a chain. Merging is a field-wise sum.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ChainStats {
    pub n_total: u64,
    pub n_forward_hist: BTreeMap<usize, u64>,
    pub n_backward_hist: BTreeMap<usize, u64>,
    pub n_reversibility_invoked: u64,
    pub n_reversibility_passed: u64,
    pub n_accepted_moves: u64,
    pub sum_jump_distance: f64,
    pub n_large_jumps: u64,
    pub component_occupancy: BTreeMap<usize, u64>,
    pub component_transitions: BTreeMap<(usize, usize), u64>,
    /// Iterations that ran the configured (non-fallback) solver.
    pub n_expensive: u64,
    pub n_expensive_accepted: u64,
    pub sum_jump_expensive: f64,
    /// Membership waived by the all-roots rule although no backward solution matched.
    pub n_unmatched_autopass: u64,
    /// Matched backward solution whose multiplier differs from the recovered one.
    pub n_multiplier_mismatch: u64,
    /// Ranked policy had no row for the set size; uniform was used.
    pub n_omega_fallback: u64,
    pub wall_time_seconds: f64,
}

impl ChainStats {
    /// Folds one iteration into the counters. `prev_x` is the position before it;
    /// components are `Some` when a tracker is active.
    pub fn observe(
        &mut self,
        prev_x: &Vector,
        rec: &IterationRecord,
        components: Option<(usize, usize)>,
    ) {
        self.n_total += 1;
        *self.n_forward_hist.entry(rec.n_forward).or_default() += 1;
        if let Some(nb) = rec.n_backward {
            *self.n_backward_hist.entry(nb).or_default() += 1;
            self.n_reversibility_invoked += 1;
            if rec.stage != Stage::ReversibilityFailed {
                self.n_reversibility_passed += 1;
            }
        }
        if rec.accepted {
            self.n_accepted_moves += 1;
            self.sum_jump_distance += rec.jump_distance;
        }
        if rec.expensive {
            self.n_expensive += 1;
            if rec.accepted {
                self.n_expensive_accepted += 1;
                self.sum_jump_expensive += rec.jump_distance;
            }
        }
        if prev_x[0] * rec.x[0] < 0.0 {
            self.n_large_jumps += 1;
        }
        if let Some((from, to)) = components {
            *self.component_occupancy.entry(to).or_default() += 1;
            *self.component_transitions.entry((from, to)).or_default() += 1;
        }
    }

    pub fn merge(&mut self, other: &ChainStats) {
        fn add<K: Ord + Clone>(a: &mut BTreeMap<K, u64>, b: &BTreeMap<K, u64>) {
            for (k, v) in b {
                *a.entry(k.clone()).or_default() += v;
            }
        }
        self.n_total += other.n_total;
        add(&mut self.n_forward_hist, &other.n_forward_hist);
        add(&mut self.n_backward_hist, &other.n_backward_hist);
        self.n_reversibility_invoked += other.n_reversibility_invoked;
        self.n_reversibility_passed += other.n_reversibility_passed;
        self.n_accepted_moves += other.n_accepted_moves;
        self.sum_jump_distance += other.sum_jump_distance;
        self.n_large_jumps += other.n_large_jumps;
        add(&mut self.component_occupancy, &other.component_occupancy);
        add(&mut self.component_transitions, &other.component_transitions);
        self.n_expensive += other.n_expensive;
        self.n_expensive_accepted += other.n_expensive_accepted;
        self.sum_jump_expensive += other.sum_jump_expensive;
        self.n_unmatched_autopass += other.n_unmatched_autopass;
        self.n_multiplier_mismatch += other.n_multiplier_mismatch;
        self.n_omega_fallback += other.n_omega_fallback;
        self.wall_time_seconds += other.wall_time_seconds;
    }

    pub fn merged(mut self, other: &ChainStats) -> ChainStats {
        self.merge(other);
        self
    }

    /// Fraction of iterations whose forward set had `n` elements.
    pub fn forward_fraction(&self, n: usize) -> f64 {
        ratio(self.n_forward_hist.get(&n).copied().unwrap_or(0), self.n_total).unwrap_or(0.0)
    }

    /// Fraction of invoked checks whose backward set had `n` elements.
    pub fn backward_fraction(&self, n: usize) -> f64 {
        ratio(self.n_backward_hist.get(&n).copied().unwrap_or(0), self.n_reversibility_invoked).unwrap_or(0.0)
    }

    /// Occupancy fraction of component `c`.
    pub fn occupancy_fraction(&self, c: usize) -> f64 {
        let total: u64 = self.component_occupancy.values().sum();
        ratio(self.component_occupancy.get(&c).copied().unwrap_or(0), total).unwrap_or(0.0)
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Headline rates of a chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRates {
    pub fsr: f64,
    /// `None` when the check was never invoked.
    pub bsr: Option<f64>,
    pub tar: f64,
    /// Mean jump over accepted moves; `None` without any.
    pub mean_jump: Option<f64>,
    pub large_jump_rate: f64,
    pub ctf: f64,
    /// Acceptance rate restricted to iterations using the configured solver.
    pub expensive_tar: Option<f64>,
    pub expensive_mean_jump: Option<f64>,
}

pub fn summary_rates(stats: &ChainStats) -> Result<SummaryRates> {
    let n = stats.n_total;
    if n == 0 {
        return Err(Error::EmptyStats);
    }
    let zero_forward = stats.n_forward_hist.get(&0).copied().unwrap_or(0);
    let off_diag: u64 = stats
        .component_transitions
        .iter()
        .filter(|((i, j), _)| i != j)
        .map(|(_, c)| c)
        .sum();
    let nf = n as f64;
    Ok(SummaryRates {
        fsr: (n - zero_forward) as f64 / nf,
        bsr: ratio(stats.n_reversibility_passed, stats.n_reversibility_invoked),
        tar: stats.n_accepted_moves as f64 / nf,
        mean_jump: (stats.n_accepted_moves > 0).then(|| stats.sum_jump_distance / stats.n_accepted_moves as f64),
        large_jump_rate: stats.n_large_jumps as f64 / nf,
        ctf: off_diag as f64 / nf,
        expensive_tar: ratio(stats.n_expensive_accepted, stats.n_expensive),
        expensive_mean_jump: (stats.n_expensive_accepted > 0)
            .then(|| stats.sum_jump_expensive / stats.n_expensive_accepted as f64),
    })
}

/// Fixed-width histogram on `[lo, hi)`. Out-of-range values are not counted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram1D {
    pub lo: f64,
    pub hi: f64,
    pub bins: Vec<u64>,
    pub n_samples: u64,
}

impl Histogram1D {
    pub fn new(lo: f64, hi: f64, n_bins: usize) -> Self {
        assert!(hi > lo && n_bins > 0);
        Self {
            lo,
            hi,
            bins: vec![0; n_bins],
            n_samples: 0,
        }
    }

    /// 100 bins on `[0, 2 pi)`.
    pub fn angle() -> Self {
        Self::new(0.0, TWO_PI, 100)
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.bins.len() as f64
    }

    pub fn add(&mut self, value: f64) {
        if !(value >= self.lo && value < self.hi) {
            return;
        }
        let idx = (((value - self.lo) / self.width()) as usize).min(self.bins.len() - 1);
        self.bins[idx] += 1;
        self.n_samples += 1;
    }

    pub fn merge(&mut self, other: &Histogram1D) {
        assert_eq!(self.bins.len(), other.bins.len());
        for (a, b) in self.bins.iter_mut().zip(other.bins.iter()) {
            *a += b;
        }
        self.n_samples += other.n_samples;
    }

    /// Merges groups of `factor` adjacent bins.
    pub fn coarsen(&self, factor: usize) -> Histogram1D {
        assert!(factor > 0 && self.bins.len() % factor == 0);
        Histogram1D {
            lo: self.lo,
            hi: self.hi,
            bins: self.bins.chunks(factor).map(|c| c.iter().sum()).collect(),
            n_samples: self.n_samples,
        }
    }
}

/// `(phi, theta)` in `[0, 2 pi)^2` for a point on the torus.
pub fn torus_angles(x: &Vector, big_r: f64, small_r: f64) -> Result<(f64, f64)> {
    let rho = (x[0] * x[0] + x[1] * x[1]).sqrt();
    let residual = (big_r - rho).powi(2) + x[2] * x[2] - small_r * small_r;
    if !(residual.abs() <= 1e-6) {
        return Err(Error::OffManifold { residual });
    }
    let wrap = |a: f64| {
        let w = a.rem_euclid(TWO_PI);
        if w >= TWO_PI {
            0.0
        } else {
            w
        }
    };
    let theta = wrap(x[1].atan2(x[0]));
    let phi = wrap((x[2] / small_r).atan2((rho - big_r) / small_r));
    Ok((phi, theta))
}

/// Marginal density of `phi` under the normalized surface measure.
pub fn torus_phi_reference_density(phi: f64, big_r: f64, small_r: f64) -> f64 {
    (1.0 + (small_r / big_r) * phi.cos()) / TWO_PI
}

/// Connected component of the 9D-sphere level set from the signs of `x1, x2, x3`.
pub fn sphere_component(x: &Vector) -> Result<usize> {
    let sign = |v: f64| if v > 0.0 { 1i8 } else if v < 0.0 { -1 } else { 0 };
    let signs = [sign(x[0]), sign(x[1]), sign(x[2])];
    match signs {
        [1, 1, 1] => Ok(0),
        [1, -1, -1] => Ok(1),
        [-1, 1, -1] => Ok(2),
        [-1, -1, 1] => Ok(3),
        _ => Err(Error::InvalidSignPattern { signs }),
    }
}

/// Pearson goodness-of-fit result.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GofResult {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    const N: usize = 32;
    let h = (b - a) / N as f64;
    let mut s = f(a) + f(b);
    for i in 1..N {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

/// Pearson chi-square test of a histogram against a density on its range.
pub fn chi_square_gof(hist: &Histogram1D, density: impl Fn(f64) -> f64) -> Result<GofResult> {
    let n = hist.n_samples as f64;
    let w = hist.width();
    let mut statistic = 0.0;
    for (i, &count) in hist.bins.iter().enumerate() {
        let a = hist.lo + i as f64 * w;
        let expected = n * simpson(&density, a, a + w);
        if !(expected >= 5.0) {
            return Err(Error::SparseBins { bin: i, expected });
        }
        let diff = count as f64 - expected;
        statistic += diff * diff / expected;
    }
    let dof = hist.bins.len() - 1;
    Ok(GofResult {
        statistic,
        dof,
        p_value: chi_square_sf(statistic, dof),
    })
}

/// Upper tail of the chi-square distribution.
pub fn chi_square_sf(statistic: f64, dof: usize) -> f64 {
    if statistic <= 0.0 {
        return 1.0;
    }
    gamma_ur(dof as f64 / 2.0, statistic / 2.0)
}

/// Two-sample Kolmogorov–Smirnov result with the asymptotic p-value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for j in 1..=200 {
        let term = sign * (-2.0 * (j * j) as f64 * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-16 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

pub fn ks_two_sample(a: &[f64], b: &[f64]) -> KsResult {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d = 0.0f64;
    while i < a.len() && j < b.len() {
        let t = a[i].min(b[j]);
        while i < a.len() && a[i] <= t {
            i += 1;
        }
        while j < b.len() && b[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let en = (na * nb / (na + nb)).sqrt();
    KsResult {
        statistic: d,
        p_value: kolmogorov_q((en + 0.12 + 0.11 / en) * d),
    }
}
