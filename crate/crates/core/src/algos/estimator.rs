use nalgebra::DVector;

use crate::chain::{MarkovRewardProcess, TransitionSampler};
use crate::error::{Error, Result};
use crate::geometry::{ErrorMetrics, FeatureMap, ProjectedSystem};
use crate::rng::{stream_rng, ALGORITHM_STREAM, TRAJECTORY_STREAM};

use super::{CtdConfig, CtdState, StepSchedule, TdState};

/// Which estimator to run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Estimator {
    Td0(StepSchedule),
    /// TD(0) reporting the running mean of its iterates.
    Td0Avg(StepSchedule),
    Ctd(CtdConfig),
}

impl Estimator {
    pub fn name(&self) -> &'static str {
        match self {
            Estimator::Td0(_) => "td0",
            Estimator::Td0Avg(_) => "td0_avg",
            Estimator::Ctd(_) => "ctd",
        }
    }
}

/// Everything a run needs that does not change between seeds.
#[derive(Debug, Clone)]
pub struct RunSetup<'a> {
    pub mrp: &'a MarkovRewardProcess,
    pub features: &'a FeatureMap,
    pub system: &'a ProjectedSystem,
    pub start_state: usize,
    pub theta0: DVector<f64>,
    sampler: TransitionSampler,
}

impl<'a> RunSetup<'a> {
    pub fn new(
        mrp: &'a MarkovRewardProcess,
        features: &'a FeatureMap,
        system: &'a ProjectedSystem,
        start_state: usize,
        theta0: DVector<f64>,
    ) -> Result<Self> {
        if start_state >= mrp.n_states() {
            return Err(Error::InvalidSpec(format!(
                "start state {start_state} out of range for {} states",
                mrp.n_states()
            )));
        }
        if theta0.len() != features.dim() {
            return Err(Error::DimensionMismatch { expected: features.dim(), got: theta0.len() });
        }
        Ok(Self {
            mrp,
            features,
            system,
            start_state,
            theta0,
            sampler: TransitionSampler::new(mrp),
        })
    }
}

/// Errors of one run at each checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorTrace {
    pub checkpoints: Vec<u64>,
    pub errors: Vec<ErrorMetrics>,
    /// CTD only: `|Phi (anchor_m - theta*)|_Psi^2` for epochs `m = 0, 1, ...`.
    pub epoch_anchor_errors: Vec<f64>,
}

impl EstimatorTrace {
    pub fn final_errors(&self) -> Option<&ErrorMetrics> {
        self.errors.last()
    }
}

fn check_finite(theta: &DVector<f64>, n: u64) -> Result<()> {
    if theta.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteIterate(n))
    }
}

/// Run one estimator along a single trajectory sampled from `seed`.
///
/// Checkpoint `n` records the iterate after `n` updates (`n = 0` is the initial
/// point). For the averaged estimator the recorded iterate is the mean of
/// `theta_1..theta_n`.
pub fn run_estimator(
    setup: &RunSetup<'_>,
    estimator: &Estimator,
    n_iterations: u64,
    seed: u64,
    checkpoints: &[u64],
) -> Result<EstimatorTrace> {
    if checkpoints.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidSpec("checkpoints must be strictly increasing".into()));
    }
    if checkpoints.last().is_some_and(|&c| c > n_iterations) {
        return Err(Error::InvalidSpec(format!(
            "checkpoint beyond the iteration budget {n_iterations}"
        )));
    }
    let mrp = setup.mrp;
    let features = setup.features;
    let system = setup.system;
    let mut traj_rng = stream_rng(seed, TRAJECTORY_STREAM);
    let mut alg_rng = stream_rng(seed, ALGORITHM_STREAM);

    let mut trace = EstimatorTrace {
        checkpoints: checkpoints.to_vec(),
        errors: Vec::with_capacity(checkpoints.len()),
        epoch_anchor_errors: Vec::new(),
    };
    let mut next_cp = 0;
    let mut s = setup.start_state;

    match estimator {
        Estimator::Td0(schedule) | Estimator::Td0Avg(schedule) => {
            schedule.validate()?;
            let averaged = matches!(estimator, Estimator::Td0Avg(_));
            let mut state = TdState::new(setup.theta0.clone());
            let record = |state: &TdState, trace: &mut EstimatorTrace| -> Result<()> {
                let theta = if averaged { &state.theta_bar } else { &state.theta };
                check_finite(theta, state.n)?;
                trace.errors.push(system.errors(theta.as_slice()));
                Ok(())
            };
            if checkpoints.first() == Some(&0) {
                record(&state, &mut trace)?;
                next_cp = 1;
            }
            for n in 0..n_iterations {
                let s_next = setup.sampler.next_state(s, &mut traj_rng);
                state.step_on(mrp, features, schedule.gamma(n), s, s_next);
                s = s_next;
                if next_cp < checkpoints.len() && checkpoints[next_cp] == n + 1 {
                    record(&state, &mut trace)?;
                    next_cp += 1;
                }
            }
        }
        Estimator::Ctd(config) => {
            let mut state = CtdState::new(setup.theta0.clone(), *config)?;
            let anchor_err = |anchor: &DVector<f64>| {
                let diff: Vec<f64> = anchor.iter().zip(system.theta_star.iter()).map(|(a, b)| a - b).collect();
                system.feature_psi_norm(&diff).powi(2)
            };
            trace.epoch_anchor_errors.push(anchor_err(&state.theta_bar_epoch));
            if checkpoints.first() == Some(&0) {
                trace.errors.push(system.errors(state.theta.as_slice()));
                next_cp = 1;
            }
            for n in 0..n_iterations {
                let s_next = setup.sampler.next_state(s, &mut traj_rng);
                state.step(mrp, features, s, s_next, &mut alg_rng);
                s = s_next;
                if state.epoch_full() {
                    state.epoch_transition(mrp, features, &mut alg_rng)?;
                    check_finite(&state.theta, n + 1)?;
                    trace.epoch_anchor_errors.push(anchor_err(&state.theta_bar_epoch));
                }
                if next_cp < checkpoints.len() && checkpoints[next_cp] == n + 1 {
                    check_finite(&state.theta, n + 1)?;
                    trace.errors.push(system.errors(state.theta.as_slice()));
                    next_cp += 1;
                }
            }
        }
    }
    Ok(trace)
}
