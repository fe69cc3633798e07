use nalgebra::DVector;

use crate::algos::{run_estimator, CtdConfig, Estimator, EstimatorTrace, RunSetup, StepSchedule};
use crate::bounds::{check_td_admissible, theorem3_constants};
use crate::error::{Error, Result};
use crate::rng::run_seed;

use super::problems::Problem;
use super::spec::{AlgorithmSpec, ExperimentSpec};

/// How independent runs are scheduled. Results do not depend on the choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Serial,
    /// Runs spread over the rayon pool. Without the `parallel` feature this is
    /// the same as `Serial`.
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Serial
        }
    }
}

/// Turn an algorithm block into an estimator, enforcing its admissibility check
/// unless the block carries `"override": true`.
pub fn resolve_estimator(alg: &AlgorithmSpec, problem: &Problem) -> Result<Estimator> {
    let mu = problem.system.mu;
    let beta = problem.mrp.discount();
    match alg {
        AlgorithmSpec::Td0 { schedule, allow_inadmissible } => {
            schedule.validate()?;
            if !allow_inadmissible {
                match schedule {
                    StepSchedule::InverseLinear { c0, c } => {
                        if let Some(why) = check_td_admissible(mu, beta, *c0, *c).failure() {
                            return Err(Error::InadmissibleStepSize(format!("td0: {why}")));
                        }
                    }
                    _ => {
                        return Err(Error::InadmissibleStepSize(
                            "td0: only inverse_linear schedules are covered by the TD(0) bound; \
                             set \"override\": true to run anyway"
                                .into(),
                        ))
                    }
                }
            }
            Ok(Estimator::Td0(*schedule))
        }
        AlgorithmSpec::Td0Avg { schedule, allow_inadmissible } => {
            schedule.validate()?;
            if !allow_inadmissible && !matches!(schedule, StepSchedule::InversePower { .. }) {
                return Err(Error::InadmissibleStepSize(
                    "td0_avg: only inverse_power schedules are covered by the averaged bound; \
                     set \"override\": true to run anyway"
                        .into(),
                ));
            }
            Ok(Estimator::Td0Avg(*schedule))
        }
        AlgorithmSpec::Ctd { gamma, epoch_length, radius, sample_mode, allow_inadmissible } => {
            let config = CtdConfig {
                gamma: *gamma,
                epoch_length: *epoch_length,
                radius: radius.unwrap_or_else(|| CtdConfig::default_radius(&problem.mrp, mu)),
                sample_mode: *sample_mode,
            };
            config.validate()?;
            if !allow_inadmissible {
                let k = theorem3_constants(mu, beta, *gamma, *epoch_length, problem.features.dim(), config.radius, 0.0)?;
                if !k.admissible {
                    return Err(Error::InadmissibleStepSize(format!(
                        "ctd: C1 = {:.4} is not below 1 (increase epoch_length or adjust gamma)",
                        k.c1
                    )));
                }
            }
            Ok(Estimator::Ctd(config))
        }
    }
}

/// What happened to one run of one algorithm.
#[derive(Debug, Clone, PartialEq)]
pub enum RunOutcome {
    Finished(EstimatorTrace),
    /// The iterate stopped being finite; detected at the given iteration.
    Diverged(u64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub run: usize,
    pub seed: u64,
    pub outcome: RunOutcome,
}

/// All runs of one algorithm plus their aggregate over the finished runs.
#[derive(Debug, Clone, PartialEq)]
pub struct AlgorithmTrace {
    pub name: &'static str,
    pub column_prefix: &'static str,
    pub runs: Vec<RunRecord>,
    /// Mean normalized value difference per checkpoint.
    pub mean: Vec<f64>,
    /// Population standard deviation of the normalized value difference.
    pub dev: Vec<f64>,
    /// Mean `|theta - theta*|_2` per checkpoint.
    pub param_mean: Vec<f64>,
    /// CTD only: mean `|Phi (anchor_m - theta*)|_Psi^2` per epoch.
    pub epoch_anchor_mean: Vec<f64>,
}

impl AlgorithmTrace {
    pub fn finished(&self) -> impl Iterator<Item = &EstimatorTrace> {
        self.runs.iter().filter_map(|r| match &r.outcome {
            RunOutcome::Finished(t) => Some(t),
            RunOutcome::Diverged(_) => None,
        })
    }

    pub fn n_diverged(&self) -> usize {
        self.runs.len() - self.finished().count()
    }

    /// Normalized value difference at the last checkpoint, one entry per finished run.
    pub fn final_normalized(&self) -> Vec<f64> {
        self.finished().filter_map(|t| t.final_errors().map(|e| e.normalized)).collect()
    }

    fn aggregate(name: &'static str, column_prefix: &'static str, runs: Vec<RunRecord>, n_checkpoints: usize) -> Self {
        let traces: Vec<&EstimatorTrace> = runs
            .iter()
            .filter_map(|r| match &r.outcome {
                RunOutcome::Finished(t) => Some(t),
                RunOutcome::Diverged(_) => None,
            })
            .collect();
        let k = traces.len() as f64;
        let mut mean = vec![0.0; n_checkpoints];
        let mut param_mean = vec![0.0; n_checkpoints];
        for t in &traces {
            for (i, e) in t.errors.iter().enumerate() {
                mean[i] += e.normalized;
                param_mean[i] += e.param;
            }
        }
        mean.iter_mut().chain(param_mean.iter_mut()).for_each(|v| *v /= k);
        let mut dev = vec![0.0; n_checkpoints];
        for t in &traces {
            for (i, e) in t.errors.iter().enumerate() {
                dev[i] += (e.normalized - mean[i]).powi(2);
            }
        }
        dev.iter_mut().for_each(|v| *v = (*v / k).sqrt());

        let n_epochs = traces.iter().map(|t| t.epoch_anchor_errors.len()).min().unwrap_or(0);
        let mut epoch_anchor_mean = vec![0.0; n_epochs];
        for t in &traces {
            for (acc, v) in epoch_anchor_mean.iter_mut().zip(&t.epoch_anchor_errors) {
                *acc += v;
            }
        }
        epoch_anchor_mean.iter_mut().for_each(|v| *v /= k);

        AlgorithmTrace {
            name,
            column_prefix,
            runs,
            mean,
            dev,
            param_mean,
            epoch_anchor_mean,
        }
    }
}

/// Aggregated result of an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub checkpoints: Vec<u64>,
    pub n_runs: usize,
    /// In CSV column order.
    pub algorithms: Vec<AlgorithmTrace>,
}

impl RunTrace {
    pub fn algorithm(&self, name: &str) -> Option<&AlgorithmTrace> {
        self.algorithms.iter().find(|a| a.name == name)
    }
}

/// Build the problem described by `spec` and run it with the default execution mode.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<RunTrace> {
    run_experiment_with(spec, Execution::default())
}

pub fn run_experiment_with(spec: &ExperimentSpec, execution: Execution) -> Result<RunTrace> {
    spec.validate()?;
    let problem = Problem::from_spec(spec)?;
    run_on_problem(spec, &problem, execution)
}

/// Run every configured algorithm `n_runs` times on an already built problem.
///
/// Run `i` of every algorithm uses the seed `run_seed(master_seed, i)`, so all
/// algorithms see the same trajectory within a run.
pub fn run_on_problem(spec: &ExperimentSpec, problem: &Problem, execution: Execution) -> Result<RunTrace> {
    spec.validate()?;
    let checkpoints = spec.checkpoints.resolve(spec.n_iterations)?;
    let algorithms = spec.ordered_algorithms();
    let estimators = algorithms
        .iter()
        .map(|a| resolve_estimator(a, problem))
        .collect::<Result<Vec<_>>>()?;
    let d = problem.features.dim();
    let theta0 = match &spec.theta0 {
        Some(v) if v.len() != d => return Err(Error::DimensionMismatch { expected: d, got: v.len() }),
        Some(v) => DVector::from_column_slice(v),
        None => DVector::zeros(d),
    };
    let setup = RunSetup::new(&problem.mrp, &problem.features, &problem.system, spec.start_state, theta0)?;

    let one_run = |run: usize| -> Result<Vec<RunRecord>> {
        let seed = run_seed(spec.master_seed, run as u64);
        estimators
            .iter()
            .map(|est| {
                let outcome = match run_estimator(&setup, est, spec.n_iterations, seed, &checkpoints) {
                    Ok(trace) => RunOutcome::Finished(trace),
                    Err(Error::NonFiniteIterate(n)) => {
                        log::warn!("run {run} ({}) diverged at iteration {n}", est.name());
                        RunOutcome::Diverged(n)
                    }
                    Err(e) => {
                        return Err(Error::Run {
                            run,
                            algorithm: est.name().to_string(),
                            source: Box::new(e),
                        })
                    }
                };
                Ok(RunRecord { run, seed, outcome })
            })
            .collect()
    };

    let per_run: Vec<Result<Vec<RunRecord>>> = match execution {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            (0..spec.n_runs).into_par_iter().map(one_run).collect()
        }
        _ => (0..spec.n_runs).map(one_run).collect(),
    };

    let mut by_algorithm: Vec<Vec<RunRecord>> = vec![Vec::with_capacity(spec.n_runs); estimators.len()];
    for records in per_run {
        for (slot, record) in by_algorithm.iter_mut().zip(records?) {
            slot.push(record);
        }
    }
    let mut traces = Vec::with_capacity(estimators.len());
    for (alg, runs) in algorithms.iter().zip(by_algorithm) {
        let trace = AlgorithmTrace::aggregate(alg.name(), alg.column_prefix(), runs, checkpoints.len());
        if trace.n_diverged() == spec.n_runs {
            return Err(Error::AllRunsDiverged(alg.name().to_string()));
        }
        traces.push(trace);
    }
    Ok(RunTrace {
        checkpoints,
        n_runs: spec.n_runs,
        algorithms: traces,
    })
}
