//! Finite Markov reward processes under a fixed policy.
//!
//! Holds the transition matrix, rewards and discount, and provides the
//! stationary distribution, the geometric mixing profile used by the bound
//! constants, and seeded trajectory sampling.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::FeatureMap;
use crate::rng;

const ROW_SUM_TOL: f64 = 1e-12;
const STATIONARY_RESIDUAL_TOL: f64 = 1e-10;
/// Deviations below this are treated as numerically zero when fitting mixing constants.
const DEVIATION_FLOOR: f64 = 1e-13;

/// A Markov reward process: transition matrix `P`, per-state reward `r` and discount `beta`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovRewardProcess {
    transition: DMatrix<f64>,
    reward: DVector<f64>,
    discount: f64,
}

impl MarkovRewardProcess {
    pub fn new(transition: DMatrix<f64>, reward: DVector<f64>, discount: f64) -> Result<Self> {
        let s = transition.nrows();
        if s == 0 {
            return Err(Error::InvalidModel("transition matrix is empty".into()));
        }
        if transition.ncols() != s {
            return Err(Error::InvalidModel(format!(
                "transition matrix is {}x{}, expected square",
                s,
                transition.ncols()
            )));
        }
        for i in 0..s {
            let mut sum = 0.0;
            for j in 0..s {
                let p = transition[(i, j)];
                if !p.is_finite() || p < 0.0 {
                    return Err(Error::InvalidModel(format!(
                        "transition entry ({i}, {j}) = {p} is not a probability"
                    )));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidModel(format!(
                    "row {i} of the transition matrix sums to {sum}, expected 1"
                )));
            }
        }
        if reward.len() != s {
            return Err(Error::InvalidModel(format!(
                "reward has {} entries, expected {s}",
                reward.len()
            )));
        }
        if let Some(i) = reward.iter().position(|r| !r.is_finite()) {
            return Err(Error::InvalidModel(format!("reward {i} is not finite")));
        }
        if !(discount > 0.0 && discount < 1.0) {
            return Err(Error::InvalidModel(format!(
                "discount {discount} must lie in (0, 1)"
            )));
        }
        Ok(Self {
            transition,
            reward,
            discount,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], reward: &[f64], discount: f64) -> Result<Self> {
        let s = rows.len();
        if let Some(i) = rows.iter().position(|row| row.len() != s) {
            return Err(Error::InvalidModel(format!(
                "transition row {i} has {} entries, expected {s}",
                rows[i].len()
            )));
        }
        let transition = DMatrix::from_fn(s, s, |i, j| rows[i][j]);
        Self::new(transition, DVector::from_column_slice(reward), discount)
    }

    /// Check the bounded-reward assumption `|r(s)| <= 1`.
    pub fn check_strict(&self) -> Result<()> {
        match self.reward.iter().position(|r| r.abs() > 1.0) {
            Some(i) => Err(Error::InvalidModel(format!(
                "strict mode: |r({i})| = {} exceeds 1",
                self.reward[i].abs()
            ))),
            None => Ok(()),
        }
    }

    pub fn with_discount(&self, discount: f64) -> Result<Self> {
        Self::new(self.transition.clone(), self.reward.clone(), discount)
    }

    pub fn n_states(&self) -> usize {
        self.transition.nrows()
    }

    pub fn transition(&self) -> &DMatrix<f64> {
        &self.transition
    }

    pub fn reward(&self) -> &DVector<f64> {
        &self.reward
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn transition_rows(&self) -> Vec<Vec<f64>> {
        (0..self.n_states())
            .map(|i| self.transition.row(i).iter().copied().collect())
            .collect()
    }

    /// First pair `(from, to)` such that `to` is not reachable from `from`, if any.
    pub fn unreachable_pair(&self) -> Option<(usize, usize)> {
        let s = self.n_states();
        let mut seen = vec![false; s];
        let mut queue = VecDeque::new();
        for from in 0..s {
            seen.iter_mut().for_each(|v| *v = false);
            seen[from] = true;
            queue.clear();
            queue.push_back(from);
            while let Some(i) = queue.pop_front() {
                for j in 0..s {
                    if !seen[j] && self.transition[(i, j)] > 0.0 {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
            if let Some(to) = seen.iter().position(|v| !v) {
                return Some((from, to));
            }
        }
        None
    }

    pub fn is_irreducible(&self) -> bool {
        self.unreachable_pair().is_none()
    }
}

/// Serialized form of a Markov reward process.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MrpFile {
    pub transition: Vec<Vec<f64>>,
    pub reward: Vec<f64>,
    pub discount: f64,
}

impl From<&MarkovRewardProcess> for MrpFile {
    fn from(mrp: &MarkovRewardProcess) -> Self {
        MrpFile {
            transition: mrp.transition_rows(),
            reward: mrp.reward.iter().copied().collect(),
            discount: mrp.discount,
        }
    }
}

impl TryFrom<MrpFile> for MarkovRewardProcess {
    type Error = Error;

    fn try_from(file: MrpFile) -> Result<Self> {
        MarkovRewardProcess::from_rows(&file.transition, &file.reward, file.discount)
    }
}

/// Stationary distribution `psi` of the chain.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryDistribution {
    psi: DVector<f64>,
}

impl StationaryDistribution {
    /// Wrap a probability vector without checking stationarity.
    pub fn from_vector(psi: DVector<f64>) -> Result<Self> {
        if psi.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidModel("distribution has negative entries".into()));
        }
        if (psi.sum() - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidModel(format!(
                "distribution sums to {}, expected 1",
                psi.sum()
            )));
        }
        Ok(Self { psi })
    }

    pub fn psi(&self) -> &DVector<f64> {
        &self.psi
    }

    /// The diagonal matrix `Psi`.
    pub fn as_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.psi)
    }

    pub fn len(&self) -> usize {
        self.psi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.psi.is_empty()
    }
}

/// Solve `psi^T P = psi^T`, `sum(psi) = 1` directly, replacing the last balance
/// equation with the normalization constraint.
pub fn stationary_distribution(mrp: &MarkovRewardProcess) -> Result<StationaryDistribution> {
    if let Some((from, to)) = mrp.unreachable_pair() {
        return Err(Error::NotIrreducible { from, to });
    }
    let s = mrp.n_states();
    let p = mrp.transition();
    let mut system = p.transpose() - DMatrix::<f64>::identity(s, s);
    for j in 0..s {
        system[(s - 1, j)] = 1.0;
    }
    let mut rhs = DVector::<f64>::zeros(s);
    rhs[s - 1] = 1.0;
    let mut psi = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::SolverFailure("stationary system is singular".into()))?;

    if psi.iter().any(|v| *v < -1e-12 || !v.is_finite()) {
        return Err(Error::SolverFailure(
            "stationary solve produced negative probabilities".into(),
        ));
    }
    psi.iter_mut().for_each(|v| *v = v.max(0.0));
    let total = psi.sum();
    psi /= total;

    let residual = (p.transpose() * &psi - &psi).amax();
    if residual > STATIONARY_RESIDUAL_TOL {
        return Err(Error::SolverFailure(format!(
            "stationary residual {residual:.3e} exceeds {STATIONARY_RESIDUAL_TOL:.0e}"
        )));
    }
    Ok(StationaryDistribution { psi })
}

/// Where the reported mixing rate came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateSource {
    /// Second-largest eigenvalue modulus of `P`.
    Eigenvalue,
    /// Fitted decay of `max_s |P^t(s,.) - psi|_1`; used when `P` looks defective
    /// or the eigensolver fails.
    DecayFit,
}

/// Geometric mixing constants of the chain plus the per-state mixing sums `B'(s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixingProfile {
    pub rho: f64,
    pub c_geo: f64,
    pub rate_source: RateSource,
    pub b_prime_per_state: Vec<f64>,
    /// Partial sums over `tau < truncation_horizon`, before the tail bound is added.
    pub partial_sums: Vec<f64>,
    pub tail_bound: f64,
    pub truncation_horizon: usize,
}

impl MixingProfile {
    /// Uniform bound `B' = max_s B'(s)`.
    pub fn b_prime_uniform(&self) -> f64 {
        self.b_prime_per_state.iter().copied().fold(0.0, f64::max)
    }
}

/// Second-largest eigenvalue modulus, or `None` if the Schur iteration fails.
fn second_eigenvalue_modulus(p: &DMatrix<f64>) -> Option<f64> {
    let s = p.nrows();
    if s < 2 {
        return Some(0.0);
    }
    let schur = nalgebra::linalg::Schur::try_new(p.clone(), f64::EPSILON, 10_000)?;
    let eig = schur.complex_eigenvalues();
    if eig.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return None;
    }
    let unit = eig
        .iter()
        .enumerate()
        .min_by(|a, b| {
            let da = (a.1.re - 1.0).hypot(a.1.im);
            let db = (b.1.re - 1.0).hypot(b.1.im);
            da.total_cmp(&db)
        })
        .map(|(i, _)| i)?;
    let rho = eig
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != unit)
        .map(|(_, z)| z.norm())
        .fold(0.0, f64::max);
    Some(if rho < 1e-12 { 0.0 } else { rho.min(1.0) })
}

/// Row-wise `l1` distance of `P^t` from `1 psi^T`, maximized over rows.
fn max_row_l1_deviation(pt: &DMatrix<f64>, psi: &DVector<f64>) -> f64 {
    let s = pt.nrows();
    (0..s)
        .map(|i| (0..s).map(|j| (pt[(i, j)] - psi[j]).abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Exponential of the least-squares slope of `ln dev_t` over the second half of
/// the informative part of the horizon.
fn fitted_decay_rate(devs: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = devs
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, d)| **d > DEVIATION_FLOOR)
        .map(|(t, d)| (t as f64, d.ln()))
        .collect();
    if pts.len() < 2 {
        return 0.0;
    }
    let tail = &pts[pts.len() / 2..];
    let tail = if tail.len() < 2 { &pts[..] } else { tail };
    let n = tail.len() as f64;
    let mx = tail.iter().map(|p| p.0).sum::<f64>() / n;
    let my = tail.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = tail.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = tail.iter().map(|p| (p.0 - mx).powi(2)).sum();
    (sxy / sxx).exp().clamp(0.0, 1.0)
}

fn c_geo_for(devs: &[f64], rho: f64) -> f64 {
    let mut c = devs[0];
    let mut rho_t = 1.0;
    for &d in &devs[1..] {
        rho_t *= rho;
        if d <= DEVIATION_FLOOR || rho_t < 1e-300 {
            continue;
        }
        c = c.max(d / rho_t);
    }
    c
}

/// The three functionals whose conditional expectations enter `B'(s)`: `r(s)phi(s)`,
/// `phi(s)phi(s)^T` and `phi(s)(P phi)(s)^T`, one row per state, matrices flattened.
fn mixing_functionals(mrp: &MarkovRewardProcess, features: &FeatureMap) -> Vec<DMatrix<f64>> {
    let s = mrp.n_states();
    let d = features.dim();
    let phi = features.matrix();
    let p_phi = mrp.transition() * phi;
    let reward_phi = DMatrix::from_fn(s, d, |i, k| mrp.reward()[i] * phi[(i, k)]);
    let lag0 = DMatrix::from_fn(s, d * d, |i, kl| phi[(i, kl / d)] * phi[(i, kl % d)]);
    let lag1 = DMatrix::from_fn(s, d * d, |i, kl| phi[(i, kl / d)] * p_phi[(i, kl % d)]);
    vec![reward_phi, lag0, lag1]
}

fn max_row_norm(m: &DMatrix<f64>) -> f64 {
    (0..m.nrows())
        .map(|i| m.row(i).norm())
        .fold(0.0, f64::max)
}

/// Mixing rate, geometric constant and truncated estimates of `B'(s)`.
///
/// For each start state the sum over `tau < truncation` of
/// `|E[g(s_tau) | s_0 = s] - E_psi[g]|` is computed exactly from powers of `P`
/// for each functional `g`, the largest of the three is kept, and the
/// geometric tail `c_geo rho^T / (1 - rho) * max_s' |g(s')|` is added.
/// `c_geo` is fitted against the row-wise `l1` (total variation) distance.
pub fn mixing_profile(
    mrp: &MarkovRewardProcess,
    features: &FeatureMap,
    psi: &StationaryDistribution,
    truncation: usize,
    tolerance: f64,
) -> Result<MixingProfile> {
    check_feature_rows(mrp, features)?;
    let s = mrp.n_states();
    let p = mrp.transition();
    let psi_v = psi.psi();
    if psi_v.len() != s {
        return Err(Error::DimensionMismatch {
            expected: s,
            got: psi_v.len(),
        });
    }

    let functionals = mixing_functionals(mrp, features);
    let stationary_means: Vec<DVector<f64>> = functionals
        .iter()
        .map(|g| g.transpose() * psi_v)
        .collect();
    let g_max = functionals.iter().map(max_row_norm).fold(0.0, f64::max);

    let mut sums = vec![vec![0.0; s]; functionals.len()];
    let mut devs = Vec::with_capacity(truncation + 1);
    let mut pt = DMatrix::<f64>::identity(s, s);
    for tau in 0..=truncation {
        devs.push(max_row_l1_deviation(&pt, psi_v));
        if tau == truncation {
            break;
        }
        for (k, g) in functionals.iter().enumerate() {
            let cond = &pt * g;
            for i in 0..s {
                let diff = cond.row(i).transpose() - &stationary_means[k];
                sums[k][i] += diff.norm();
            }
        }
        pt = &pt * p;
    }

    let (rho, rate_source) = match second_eigenvalue_modulus(p) {
        Some(rho_eig) => {
            let c_eig = c_geo_for(&devs, rho_eig);
            // A defective P shows up as dev_t / rho^t still growing late in the horizon.
            let split = devs.len() * 3 / 4;
            let early = c_geo_for(&devs[..split.max(1)], rho_eig);
            if rho_eig > 0.0 && split > 4 && c_eig > 1.5 * early {
                (fitted_decay_rate(&devs).max(rho_eig), RateSource::DecayFit)
            } else {
                (rho_eig, RateSource::Eigenvalue)
            }
        }
        None => (fitted_decay_rate(&devs), RateSource::DecayFit),
    };
    let c_geo = c_geo_for(&devs, rho);

    let partial_sums: Vec<f64> = (0..s)
        .map(|i| sums.iter().map(|row| row[i]).fold(0.0, f64::max))
        .collect();
    let tail_bound = if rho >= 1.0 {
        f64::INFINITY
    } else {
        c_geo * rho.powi(truncation as i32) / (1.0 - rho) * g_max
    };

    if truncation == 0 {
        return Err(Error::TruncationTooSmall {
            tail: tail_bound,
            partial: 0.0,
            tolerance,
        });
    }
    if let Some(i) = partial_sums
        .iter()
        .position(|part| tail_bound > tolerance * part)
    {
        if tail_bound > 0.0 {
            return Err(Error::TruncationTooSmall {
                tail: tail_bound,
                partial: partial_sums[i],
                tolerance,
            });
        }
    }

    Ok(MixingProfile {
        rho,
        c_geo,
        rate_source,
        b_prime_per_state: partial_sums.iter().map(|p| p + tail_bound).collect(),
        partial_sums,
        tail_bound,
        truncation_horizon: truncation,
    })
}

/// Weighted mixing sums over `tau < horizon`, each term multiplied by `weight(tau)`.
///
/// This is the step-size weighted variant of the mixing assumption. No tail bound
/// is attached: the weights may grow without limit.
pub fn weighted_mixing_sums(
    mrp: &MarkovRewardProcess,
    features: &FeatureMap,
    psi: &StationaryDistribution,
    horizon: usize,
    weight: impl Fn(usize) -> f64,
) -> Result<Vec<f64>> {
    check_feature_rows(mrp, features)?;
    let s = mrp.n_states();
    let functionals = mixing_functionals(mrp, features);
    let means: Vec<DVector<f64>> = functionals
        .iter()
        .map(|g| g.transpose() * psi.psi())
        .collect();
    let mut sums = vec![vec![0.0; s]; functionals.len()];
    let mut pt = DMatrix::<f64>::identity(s, s);
    for tau in 0..horizon {
        let w = weight(tau);
        for (k, g) in functionals.iter().enumerate() {
            let cond = &pt * g;
            for i in 0..s {
                sums[k][i] += w * (cond.row(i).transpose() - &means[k]).norm();
            }
        }
        pt = &pt * mrp.transition();
    }
    Ok((0..s)
        .map(|i| sums.iter().map(|row| row[i]).fold(0.0, f64::max))
        .collect())
}

fn check_feature_rows(mrp: &MarkovRewardProcess, features: &FeatureMap) -> Result<()> {
    if features.n_states() != mrp.n_states() {
        return Err(Error::DimensionMismatch {
            expected: mrp.n_states(),
            got: features.n_states(),
        });
    }
    Ok(())
}

/// Per-row categorical samplers for `P`.
#[derive(Debug, Clone)]
pub struct TransitionSampler {
    rows: Vec<WeightedIndex<f64>>,
}

impl TransitionSampler {
    pub fn new(mrp: &MarkovRewardProcess) -> Self {
        let rows = (0..mrp.n_states())
            .map(|i| {
                WeightedIndex::new(mrp.transition().row(i).iter().copied())
                    .expect("validated rows are probability vectors")
            })
            .collect();
        Self { rows }
    }

    pub fn n_states(&self) -> usize {
        self.rows.len()
    }

    #[inline]
    pub fn next_state<R: Rng + ?Sized>(&self, state: usize, rng: &mut R) -> usize {
        self.rows[state].sample(rng)
    }
}

/// A sampled state path `s_0, s_1, ...` and the seed that produced it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trajectory {
    pub states: Vec<usize>,
    pub seed: u64,
}

/// Sample `length` transitions from `start_state`, deterministically in `seed`.
pub fn sample_trajectory(
    mrp: &MarkovRewardProcess,
    start_state: usize,
    length: usize,
    seed: u64,
) -> Result<Trajectory> {
    if start_state >= mrp.n_states() {
        return Err(Error::InvalidModel(format!(
            "start state {start_state} out of range for {} states",
            mrp.n_states()
        )));
    }
    let sampler = TransitionSampler::new(mrp);
    let mut rng = rng::stream_rng(seed, rng::TRAJECTORY_STREAM);
    let mut states = Vec::with_capacity(length + 1);
    let mut s = start_state;
    states.push(s);
    for _ in 0..length {
        s = sampler.next_state(s, &mut rng);
        states.push(s);
    }
    Ok(Trajectory { states, seed })
}

/// Random chain with flat-Dirichlet rows and rewards uniform on `[0, 1]`.
pub fn random_mrp(n_states: usize, discount: f64, seed: u64) -> Result<MarkovRewardProcess> {
    if n_states < 2 {
        return Err(Error::InvalidModel(format!(
            "random chain needs at least 2 states, got {n_states}"
        )));
    }
    let mut rng = rng::stream_rng(seed, 0);
    let mut transition = DMatrix::<f64>::zeros(n_states, n_states);
    for i in 0..n_states {
        let draws: Vec<f64> = (0..n_states).map(|_| rng.sample::<f64, _>(Exp1)).collect();
        let total: f64 = draws.iter().sum();
        for (j, x) in draws.iter().enumerate() {
            transition[(i, j)] = x / total;
        }
    }
    let reward = DVector::from_fn(n_states, |_, _| rng.random::<f64>());
    MarkovRewardProcess::new(transition, reward, discount)
}
