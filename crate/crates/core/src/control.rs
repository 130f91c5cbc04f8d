//! Closed-loop ensemble control under process noise.
//!
//! Each member of an ensemble drives its own copy of the plant. Three learned
//! policies are supported: every member applies its own control, every member
//! applies the ensemble-mean control, or the mean is taken over Chauvenet
//! inliers only while outliers keep their own control.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrators::euler_step;
use crate::rng::{derive_seed, streams};
use crate::system::{AffineSystem, AnalyticSolution};
use crate::value_net::{CostToGo, NetworkParams};
use crate::State;

/// States with a component beyond this magnitude count as diverged.
pub const DIVERGENCE_BOUND: f64 = 1e6;
/// Ridge added to a near-singular ensemble covariance.
pub const COVARIANCE_RIDGE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble<C = NetworkParams> {
    members: Vec<C>,
}

impl<C: CostToGo> Ensemble<C> {
    pub fn new(members: Vec<C>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::EmptyEnsemble);
        }
        Ok(Self { members })
    }

    pub fn members(&self) -> &[C] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    Individual,
    MeanInclusive,
    MeanOutlierExcluding,
    Analytic,
    Zero,
}

impl Policy {
    pub const ALL: [Policy; 5] = [
        Policy::Individual,
        Policy::MeanInclusive,
        Policy::MeanOutlierExcluding,
        Policy::Analytic,
        Policy::Zero,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Policy::Individual => "individual",
            Policy::MeanInclusive => "mean_inclusive",
            Policy::MeanOutlierExcluding => "mean_outlier_excluding",
            Policy::Analytic => "analytic",
            Policy::Zero => "zero",
        }
    }

    /// Whether the policy reads the ensemble networks.
    pub fn is_learned(self) -> bool {
        matches!(
            self,
            Policy::Individual | Policy::MeanInclusive | Policy::MeanOutlierExcluding
        )
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Policy::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::UnknownPolicy(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub t0: f64,
    pub tf: f64,
    pub dt: f64,
    pub noise_sigma: f64,
    pub ic_nominal: State,
    pub ic_perturb_sigma: f64,
    pub policy: Policy,
    pub seed: u64,
    /// Number of plant copies for the reference policies when no ensemble is given.
    pub members: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            t0: 0.0,
            tf: 20.0,
            dt: 0.01,
            noise_sigma: 0.01,
            ic_nominal: [10.0, 10.0],
            ic_perturb_sigma: 0.01,
            policy: Policy::MeanOutlierExcluding,
            seed: 0,
            members: 20,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt {} must be positive", self.dt));
        }
        if !(self.tf > self.t0) {
            return bad(format!("tf {} must exceed t0 {}", self.tf, self.t0));
        }
        if !(self.noise_sigma >= 0.0 && self.ic_perturb_sigma >= 0.0) {
            return bad("noise and perturbation sigmas must be >= 0".into());
        }
        if self.ic_nominal.iter().any(|v| !v.is_finite()) {
            return bad("initial condition must be finite".into());
        }
        Ok(())
    }

    /// Number of Euler steps `M = (tf - t0) / dt`, rounded to the nearest integer.
    pub fn steps(&self) -> usize {
        ((self.tf - self.t0) / self.dt).round().max(1.0) as usize
    }
}

/// `u = -½ R⁻¹ f2(x)ᵀ ∇ₓĴ(x)` for one member.
pub fn member_control<C, S>(net: &C, sys: &S, x: &State) -> f64
where
    C: CostToGo + ?Sized,
    S: AffineSystem + ?Sized,
{
    let (_, lam) = net.value_and_costate(x);
    sys.control_from_costate(x, &lam)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutlierStats {
    pub mu: State,
    /// Covariance actually used for the densities (after any ridge).
    pub sigma: [[f64; 2]; 2],
    pub regularized: bool,
    /// Squared Mahalanobis distances.
    pub distances: Vec<f64>,
    pub densities: Vec<f64>,
    pub threshold: f64,
    pub flags: Vec<bool>,
}

/// Multivariate Chauvenet test: fit a Gaussian to the member states and flag
/// members whose density falls below `1/(2N)`.
pub fn chauvenet_flags(states: &[State]) -> Result<OutlierStats> {
    let n = states.len();
    if n < 2 {
        return Err(Error::TooFewMembers(n));
    }
    let nf = n as f64;
    let mu = [
        order_free_sum(states.iter().map(|x| x[0])) / nf,
        order_free_sum(states.iter().map(|x| x[1])) / nf,
    ];
    let moment = |i: usize, j: usize| {
        order_free_sum(states.iter().map(|x| (x[i] - mu[i]) * (x[j] - mu[j]))) / (nf - 1.0)
    };
    let cross = moment(0, 1);
    let mut s = [[moment(0, 0), cross], [cross, moment(1, 1)]];

    let trace = s[0][0] + s[1][1];
    let mut det = s[0][0] * s[1][1] - s[0][1] * s[1][0];
    let regularized = !(det > f64::EPSILON * trace * trace);
    if regularized {
        s[0][0] += COVARIANCE_RIDGE;
        s[1][1] += COVARIANCE_RIDGE;
        det = s[0][0] * s[1][1] - s[0][1] * s[1][0];
    }
    let inv = [[s[1][1] / det, -s[0][1] / det], [-s[1][0] / det, s[0][0] / det]];
    let norm = 1.0 / (2.0 * std::f64::consts::PI * det.sqrt());

    let distances: Vec<f64> = states
        .iter()
        .map(|x| {
            let d = [x[0] - mu[0], x[1] - mu[1]];
            d[0] * (inv[0][0] * d[0] + inv[0][1] * d[1]) + d[1] * (inv[1][0] * d[0] + inv[1][1] * d[1])
        })
        .collect();
    let densities: Vec<f64> = distances.iter().map(|d2| norm * (-0.5 * d2).exp()).collect();
    let threshold = 1.0 / (2.0 * nf);
    let all_equal = densities.iter().all(|&p| p == densities[0]);
    let flags = densities
        .iter()
        .map(|&p| !all_equal && p < threshold)
        .collect();

    Ok(OutlierStats {
        mu,
        sigma: s,
        regularized,
        distances,
        densities,
        threshold,
        flags,
    })
}

/// Sum of sorted terms, so the result does not depend on member order.
fn order_free_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.collect();
    v.sort_unstable_by(f64::total_cmp);
    v.iter().sum()
}

/// Controls and outlier mask for the members marked `active`. Inactive
/// members get `NaN` and are ignored by the ensemble statistics.
fn policy_controls<C, S>(
    policy: Policy,
    members: &[C],
    sys: &S,
    states: &[State],
    active: &[bool],
) -> (Vec<f64>, Vec<bool>)
where
    C: CostToGo,
    S: AffineSystem + AnalyticSolution + ?Sized,
{
    let n = states.len();
    let mut flags = vec![false; n];
    let own = |j: usize| match policy {
        Policy::Analytic => sys.analytic_control(&states[j]),
        Policy::Zero => 0.0,
        _ => member_control(&members[j], sys, &states[j]),
    };
    let mut u: Vec<f64> = (0..n)
        .map(|j| if active[j] { own(j) } else { f64::NAN })
        .collect();

    match policy {
        Policy::MeanInclusive => {
            let idx: Vec<usize> = (0..n).filter(|&j| active[j]).collect();
            apply_mean(&mut u, &idx);
        }
        Policy::MeanOutlierExcluding => {
            let idx: Vec<usize> = (0..n).filter(|&j| active[j]).collect();
            let sub: Vec<State> = idx.iter().map(|&j| states[j]).collect();
            if let Ok(stats) = chauvenet_flags(&sub) {
                let inliers: Vec<usize> = idx
                    .iter()
                    .zip(&stats.flags)
                    .filter(|(_, &f)| !f)
                    .map(|(&j, _)| j)
                    .collect();
                for (&j, &f) in idx.iter().zip(&stats.flags) {
                    flags[j] = f;
                }
                // With every member flagged there is no inlier mean; all keep their own control.
                apply_mean(&mut u, &inliers);
            }
        }
        _ => {}
    }
    (u, flags)
}

fn apply_mean(u: &mut [f64], idx: &[usize]) {
    if idx.is_empty() {
        return;
    }
    // Averaging offsets from the first control keeps the mean of equal controls exact.
    let first = u[idx[0]];
    let mean = first + idx.iter().map(|&j| u[j] - first).sum::<f64>() / idx.len() as f64;
    for &j in idx {
        u[j] = mean;
    }
}

fn step_all<C, S>(
    policy: Policy,
    ensemble: &Ensemble<C>,
    sys: &S,
    states: &[State],
    dt: f64,
) -> Result<(Vec<State>, Vec<f64>, Vec<bool>)>
where
    C: CostToGo,
    S: AffineSystem + AnalyticSolution + ?Sized,
{
    if states.len() != ensemble.len() {
        return Err(Error::InvalidConfig(format!(
            "{} states for an ensemble of {}",
            states.len(),
            ensemble.len()
        )));
    }
    let active = vec![true; states.len()];
    let (u, flags) = policy_controls(policy, ensemble.members(), sys, states, &active);
    let next = states
        .iter()
        .zip(&u)
        .map(|(x, &uj)| euler_step(sys, x, uj, dt))
        .collect();
    Ok((next, u, flags))
}

/// Every member steps with its own control.
pub fn individual_policy_step<C, S>(
    ensemble: &Ensemble<C>,
    sys: &S,
    states: &[State],
    dt: f64,
) -> Result<(Vec<State>, Vec<f64>)>
where
    C: CostToGo,
    S: AffineSystem + AnalyticSolution + ?Sized,
{
    step_all(Policy::Individual, ensemble, sys, states, dt).map(|(x, u, _)| (x, u))
}

/// Every member steps with the mean of all member controls, each member
/// evaluated at its own state.
pub fn mean_policy_step<C, S>(
    ensemble: &Ensemble<C>,
    sys: &S,
    states: &[State],
    dt: f64,
) -> Result<(Vec<State>, Vec<f64>)>
where
    C: CostToGo,
    S: AffineSystem + AnalyticSolution + ?Sized,
{
    step_all(Policy::MeanInclusive, ensemble, sys, states, dt).map(|(x, u, _)| (x, u))
}

/// Inliers step with the inlier-mean control, flagged members with their own.
pub fn outlier_policy_step<C, S>(
    ensemble: &Ensemble<C>,
    sys: &S,
    states: &[State],
    dt: f64,
) -> Result<(Vec<State>, Vec<f64>, Vec<bool>)>
where
    C: CostToGo,
    S: AffineSystem + AnalyticSolution + ?Sized,
{
    if states.len() < 2 {
        return Err(Error::TooFewMembers(states.len()));
    }
    step_all(Policy::MeanOutlierExcluding, ensemble, sys, states, dt)
}

/// Time-aligned record of a closed-loop run. Row `k` holds the observed
/// (noise-perturbed) states at `times[k]` and the controls computed from them.
#[derive(Debug, Clone, PartialEq)]
pub struct SimRun {
    pub policy: Policy,
    pub seed: u64,
    pub times: Vec<f64>,
    pub states: Vec<Vec<State>>,
    pub controls: Vec<Vec<f64>>,
    pub outliers: Vec<Vec<bool>>,
    /// Step index at which each member diverged, if it did.
    pub diverged_at: Vec<Option<usize>>,
}

impl SimRun {
    pub fn members(&self) -> usize {
        self.diverged_at.len()
    }

    pub fn final_states(&self) -> &[State] {
        self.states.last().map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn is_diverged(&self, member: usize) -> bool {
        self.diverged_at[member].is_some()
    }

    /// Writes `t,member,x1,x2,u,is_outlier,policy` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
        w.write_record(["t", "member", "x1", "x2", "u", "is_outlier", "policy"])?;
        for (k, &t) in self.times.iter().enumerate() {
            for j in 0..self.members() {
                let x = self.states[k][j];
                w.write_record([
                    t.to_string(),
                    j.to_string(),
                    x[0].to_string(),
                    x[1].to_string(),
                    self.controls[k][j].to_string(),
                    self.outliers[k][j].to_string(),
                    self.policy.to_string(),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

fn member_rng(seed: u64, member: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(derive_seed(seed, streams::SIMULATION), member as u64))
}

fn gaussian(rng: &mut ChaCha8Rng, sigma: f64) -> State {
    let a: f64 = rng.sample(StandardNormal);
    let b: f64 = rng.sample(StandardNormal);
    [sigma * a, sigma * b]
}

fn is_diverged(x: &State) -> bool {
    x.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_BOUND)
}

/// Noisy closed-loop simulation. Learned policies need an ensemble; the
/// reference policies run `cfg.members` plant copies when none is given.
///
/// At each step noise is added to every live state, controls are computed
/// from the perturbed states and each state takes one explicit Euler step.
/// A member whose state leaves the finite bound is frozen and dropped from the
/// ensemble statistics. The final row repeats the policy evaluation at `tf`
/// without noise or a step.
pub fn simulate<C, S>(ensemble: Option<&Ensemble<C>>, sys: &S, cfg: &SimConfig) -> Result<SimRun>
where
    C: CostToGo,
    S: AffineSystem + AnalyticSolution + ?Sized,
{
    cfg.validate()?;
    let members: &[C] = match ensemble {
        Some(e) => e.members(),
        None if cfg.policy.is_learned() => return Err(Error::EmptyEnsemble),
        None => &[],
    };
    let n = if members.is_empty() { cfg.members } else { members.len() };
    if n == 0 {
        return Err(Error::EmptyEnsemble);
    }
    if cfg.policy == Policy::MeanOutlierExcluding && n < 2 {
        return Err(Error::TooFewMembers(n));
    }

    let mut rngs: Vec<ChaCha8Rng> = (0..n).map(|j| member_rng(cfg.seed, j)).collect();
    let mut x: Vec<State> = rngs
        .iter_mut()
        .map(|rng| {
            let d = gaussian(rng, cfg.ic_perturb_sigma);
            [cfg.ic_nominal[0] + d[0], cfg.ic_nominal[1] + d[1]]
        })
        .collect();
    let mut active = vec![true; n];
    let mut diverged_at = vec![None; n];

    let m = cfg.steps();
    let mut run = SimRun {
        policy: cfg.policy,
        seed: cfg.seed,
        times: Vec::with_capacity(m + 1),
        states: Vec::with_capacity(m + 1),
        controls: Vec::with_capacity(m + 1),
        outliers: Vec::with_capacity(m + 1),
        diverged_at: Vec::new(),
    };

    for k in 0..=m {
        let last = k == m;
        if !last && cfg.noise_sigma > 0.0 {
            for j in (0..n).filter(|&j| active[j]) {
                let d = gaussian(&mut rngs[j], cfg.noise_sigma);
                x[j] = [x[j][0] + d[0], x[j][1] + d[1]];
            }
        }
        let (u, flags) = policy_controls(cfg.policy, members, sys, &x, &active);
        run.times.push(cfg.t0 + k as f64 * cfg.dt);
        run.states.push(x.clone());
        run.controls.push(u.clone());
        run.outliers.push(flags);
        if last {
            break;
        }
        for j in 0..n {
            if !active[j] {
                continue;
            }
            let next = euler_step(sys, &x[j], u[j], cfg.dt);
            if is_diverged(&next) || !u[j].is_finite() {
                active[j] = false;
                diverged_at[j] = Some(k + 1);
            } else {
                x[j] = next;
            }
        }
        if !active.iter().any(|&a| a) {
            break;
        }
    }
    run.diverged_at = diverged_at;
    Ok(run)
}
