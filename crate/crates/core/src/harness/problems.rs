use nalgebra::DMatrix;
use rand::distr::Open01;
use rand::Rng;

use crate::algos::{SampleMode, StepSchedule};
use crate::bounds::{check_td_admissible, min_epoch_length};
use crate::chain::{random_mrp, stationary_distribution, MarkovRewardProcess, MrpFile, StationaryDistribution};
use crate::error::{Error, Result};
use crate::geometry::{build_system, FeatureFile, FeatureMap, ProjectedSystem};
use crate::rng::{child_seed, stream_rng};

use super::spec::{AlgorithmSpec, ExperimentSpec, ProblemSpec, DEFAULT_DISCOUNT};

/// Resampling attempts for random features before giving up.
pub const MAX_FEATURE_RETRIES: usize = 16;

const FEATURE_TAG: u64 = 0xfea7;

/// The two-state chain `P = [[0.2, 0.8], [0.3, 0.7]]`, `r = (1, 2)`, `Phi = (1, 2)^T`.
pub fn build_example1(beta: f64) -> Result<(MarkovRewardProcess, FeatureMap)> {
    let mrp = MarkovRewardProcess::from_rows(&[vec![0.2, 0.8], vec![0.3, 0.7]], &[1.0, 2.0], beta)?;
    let features = FeatureMap::from_rows(&[vec![1.0], vec![2.0]])?;
    Ok((mrp, features))
}

/// Random chain from [`random_mrp`] with `d` features drawn uniformly from `(0, 1)`.
///
/// Feature matrices that come out rank deficient are redrawn from fresh child
/// seeds, at most [`MAX_FEATURE_RETRIES`] times.
pub fn build_example2(n_states: usize, d: usize, seed: u64, beta: f64) -> Result<(MarkovRewardProcess, FeatureMap)> {
    if d == 0 || d > n_states {
        return Err(Error::InvalidSpec(format!(
            "feature dimension {d} must lie in [1, {n_states}]"
        )));
    }
    let mrp = random_mrp(n_states, beta, seed)?;
    if let Some((from, to)) = mrp.unreachable_pair() {
        return Err(Error::NotIrreducible { from, to });
    }
    for attempt in 0..MAX_FEATURE_RETRIES {
        let mut rng = stream_rng(child_seed(seed, FEATURE_TAG + attempt as u64), 0);
        let phi = DMatrix::from_fn(n_states, d, |_, _| rng.sample::<f64, _>(Open01));
        match FeatureMap::new(phi) {
            Ok(features) => return Ok((mrp, features)),
            Err(Error::RankDeficientFeatures { .. }) => {
                log::debug!("feature draw {attempt} rank deficient, resampling");
            }
            Err(e) => return Err(e),
        }
    }
    Err(Error::RankDeficientAfterRetries(MAX_FEATURE_RETRIES))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &std::path::Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

/// A fully built problem: chain, features, stationary distribution and `theta*`.
#[derive(Debug, Clone)]
pub struct Problem {
    pub mrp: MarkovRewardProcess,
    pub features: FeatureMap,
    pub psi: StationaryDistribution,
    pub system: ProjectedSystem,
}

impl Problem {
    pub fn new(mrp: MarkovRewardProcess, features: FeatureMap) -> Result<Self> {
        if features.n_states() != mrp.n_states() {
            return Err(Error::DimensionMismatch {
                expected: mrp.n_states(),
                got: features.n_states(),
            });
        }
        let psi = stationary_distribution(&mrp)?;
        let system = build_system(&mrp, &features, &psi)?;
        Ok(Problem { mrp, features, psi, system })
    }

    /// Build the problem described by `spec`, honoring `strict_assumptions`.
    pub fn from_spec(spec: &ExperimentSpec) -> Result<Self> {
        let beta = spec.discount.unwrap_or(DEFAULT_DISCOUNT);
        let (mrp, features) = match &spec.problem {
            ProblemSpec::Example1 => build_example1(beta)?,
            ProblemSpec::Example2 { n_states, d, seed, identity_features } => {
                if *identity_features {
                    let mrp = random_mrp(*n_states, beta, *seed)?;
                    (mrp, FeatureMap::identity(*n_states))
                } else {
                    build_example2(*n_states, *d, *seed, beta)?
                }
            }
            ProblemSpec::Files { mrp, features } => {
                let file: MrpFile = read_json(mrp)?;
                let mut mrp = MarkovRewardProcess::try_from(file)?;
                if let Some(beta) = spec.discount {
                    mrp = mrp.with_discount(beta)?;
                }
                let n = mrp.n_states();
                let features = read_json::<FeatureFile>(features)?.into_features(n)?;
                (mrp, features)
            }
        };
        if spec.strict_assumptions {
            mrp.check_strict()?;
            features.check_strict()?;
        } else {
            for warning in features.assumption_warnings() {
                log::warn!("{warning}");
            }
        }
        Problem::new(mrp, features)
    }
}

/// Iteration budget of [`example2_spec`].
pub const EXAMPLE2_ITERATIONS: u64 = 2_000_000;

/// A ready-to-run spec for a random chain, with step sizes derived from the
/// instance.
///
/// - TD(0): `c0` at 90% of its admissible limit and `mu (1-beta) c0 c = 2`.
/// - Averaged TD(0): `alpha = 3/4`, ten times that `c0`, same `c`.
/// - CTD: `gamma = (1-beta)/(4 d^2)`, and epochs a quarter of the budget long
///   (or longer, if needed for `C1 <= 1/2`).
pub fn example2_spec(n_states: usize, d: usize, seed: u64, beta: f64) -> Result<ExperimentSpec> {
    let mut spec = ExperimentSpec::example1_default();
    spec.problem = ProblemSpec::Example2 { n_states, d, seed, identity_features: false };
    spec.discount = Some(beta);
    let problem = Problem::from_spec(&spec)?;
    let mu = problem.system.mu;
    let c0 = 0.9 * check_td_admissible(mu, beta, 1.0, 1.0).c0_limit;
    let c = 2.0 / (mu * (1.0 - beta) * c0);
    let gamma = (1.0 - beta) / (4.0 * (d * d) as f64);
    let epoch_length = min_epoch_length(mu, beta, gamma, d, 0.5)
        .ok_or_else(|| Error::InvalidSpec("no epoch length reaches C1 <= 1/2".into()))?
        .max((EXAMPLE2_ITERATIONS / 4) as usize);
    spec.algorithms = vec![
        AlgorithmSpec::Td0 {
            schedule: StepSchedule::InverseLinear { c0, c },
            allow_inadmissible: false,
        },
        AlgorithmSpec::Td0Avg {
            schedule: StepSchedule::InversePower { c0: 10.0 * c0, c, alpha: 0.75 },
            allow_inadmissible: false,
        },
        AlgorithmSpec::Ctd {
            gamma,
            epoch_length,
            radius: None,
            sample_mode: SampleMode::Online,
            allow_inadmissible: false,
        },
    ];
    spec.n_iterations = EXAMPLE2_ITERATIONS.max(epoch_length as u64);
    Ok(spec)
}
