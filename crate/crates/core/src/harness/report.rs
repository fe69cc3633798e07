use serde::{Deserialize, Serialize};

use crate::algos::{CtdConfig, StepSchedule};
use crate::bounds::{
    check_td_admissible, min_epoch_length, mixing_constant, theorem1_constants, theorem2_constants, theorem3_constants,
    AveragedConstants, CtdConstants, MixingConstantForm, TdAdmissibility, TdBoundInputs, TdConstants,
};
use crate::chain::{mixing_profile, MixingProfile};
use crate::error::Result;

use super::problems::Problem;
use super::spec::{AlgorithmSpec, ExperimentSpec};

/// `theta*`, the true value function and the projected system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub theta_star: Vec<f64>,
    pub v_pi: Vec<f64>,
    pub mu: f64,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub psi: Vec<f64>,
    pub fixed_point_residual: f64,
    /// `|Phi theta* - V|_Psi`, the approximation error of the best fixed point.
    pub approximation_error: f64,
    pub assumption_warnings: Vec<String>,
}

pub fn solve_report(problem: &Problem) -> SolveReport {
    let sys = &problem.system;
    let d = sys.dim();
    let phi_theta = problem.features.matrix() * &sys.theta_star;
    let approx = (phi_theta - &sys.v_pi)
        .iter()
        .zip(problem.psi.psi().iter())
        .map(|(e, p)| p * e * e)
        .sum::<f64>()
        .sqrt();
    SolveReport {
        theta_star: sys.theta_star.iter().copied().collect(),
        v_pi: sys.v_pi.iter().copied().collect(),
        mu: sys.mu,
        a: (0..d).map(|i| (0..d).map(|j| sys.a_matrix[(i, j)]).collect()).collect(),
        b: sys.b_vector.iter().copied().collect(),
        psi: problem.psi.psi().iter().copied().collect(),
        fixed_point_residual: sys.fixed_point_residual,
        approximation_error: approx,
        assumption_warnings: problem.features.assumption_warnings(),
    }
}

pub fn mixing_report(spec: &ExperimentSpec, problem: &Problem) -> Result<MixingProfile> {
    mixing_profile(
        &problem.mrp,
        &problem.features,
        &problem.psi,
        spec.mixing_truncation,
        spec.mixing_tolerance,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixingSummary {
    pub rho: f64,
    pub c_geo: f64,
    /// `B(s0)` at the configured start state.
    pub b_start: f64,
    /// `B' = max_s B(s)`.
    pub b_prime: f64,
}

/// Bound values at the final iteration, or why they are unavailable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TdBoundReport {
    pub c0: f64,
    pub c: f64,
    pub admissibility: TdAdmissibility,
    /// `C` in both printed forms.
    pub c_big_theorem: f64,
    pub c_big_proposition: f64,
    pub constants: Option<TdConstants>,
    pub k1_final: Option<f64>,
    pub k2_final: Option<f64>,
    /// `K1(n) / sqrt(n + c)` at `n = n_iterations`.
    pub expectation_bound_final: Option<f64>,
    pub high_probability_bound_final: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AveragedBoundReport {
    pub c0: f64,
    pub c: f64,
    pub alpha: f64,
    pub constants: Option<AveragedConstants>,
    pub k1_final: Option<f64>,
    pub k2_final: Option<f64>,
    pub expectation_bound_final: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CtdBoundReport {
    pub constants: Option<CtdConstants>,
    /// Smallest epoch length with `C1 <= 0.9` at this step size.
    pub min_epoch_length_c1_0_9: Option<usize>,
    pub error: Option<String>,
}

/// Every bound constant for the algorithms configured in a spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub mu: f64,
    pub beta: f64,
    pub d: usize,
    pub start_state: usize,
    pub delta: f64,
    pub n_iterations: u64,
    pub theta0_norm: f64,
    pub theta_star_norm: f64,
    pub mixing: MixingSummary,
    pub td0: Option<TdBoundReport>,
    pub td0_avg: Option<AveragedBoundReport>,
    pub ctd: Option<CtdBoundReport>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Bound inputs for a spec with step-size fields left at zero.
pub fn bound_inputs(spec: &ExperimentSpec, problem: &Problem, profile: &MixingProfile) -> TdBoundInputs {
    let d = problem.features.dim();
    let theta0 = spec.theta0.clone().unwrap_or_else(|| vec![0.0; d]);
    let theta_star: Vec<f64> = problem.system.theta_star.iter().copied().collect();
    let diff: Vec<f64> = theta0.iter().zip(&theta_star).map(|(a, b)| a - b).collect();
    TdBoundInputs {
        mu: problem.system.mu,
        beta: problem.mrp.discount(),
        c0: 0.0,
        c: 0.0,
        d,
        b_mix: profile.b_prime_per_state.get(spec.start_state).copied().unwrap_or(f64::NAN),
        b_prime: profile.b_prime_uniform(),
        theta0_norm: norm(&theta0),
        theta0_error: norm(&diff),
        theta_star_norm: norm(&theta_star),
        delta: spec.delta,
    }
}

fn schedule_params(schedule: &StepSchedule) -> (f64, f64, Option<f64>) {
    match *schedule {
        StepSchedule::InverseLinear { c0, c } => (c0, c, None),
        StepSchedule::InversePower { c0, c, alpha } => (c0, c, Some(alpha)),
        StepSchedule::Constant { gamma } => (gamma, f64::INFINITY, None),
    }
}

fn td_report(base: TdBoundInputs, schedule: &StepSchedule, n: f64) -> TdBoundReport {
    let (c0, c, _) = schedule_params(schedule);
    let inputs = TdBoundInputs { c0, c, ..base };
    let admissibility = check_td_admissible(inputs.mu, inputs.beta, c0, c);
    let mut report = TdBoundReport {
        c0,
        c,
        admissibility,
        c_big_theorem: mixing_constant(&inputs, MixingConstantForm::Theorem),
        c_big_proposition: mixing_constant(&inputs, MixingConstantForm::Proposition),
        constants: None,
        k1_final: None,
        k2_final: None,
        expectation_bound_final: None,
        high_probability_bound_final: None,
        error: None,
    };
    if !matches!(schedule, StepSchedule::InverseLinear { .. }) {
        report.error = Some("TD(0) bound requires an inverse_linear schedule".into());
        return report;
    }
    match theorem1_constants(inputs) {
        Ok(k) => {
            report.k1_final = Some(k.k1(n));
            report.k2_final = Some(k.k2(n));
            report.expectation_bound_final = Some(k.expectation_bound(n));
            report.high_probability_bound_final = Some(k.high_probability_bound(n));
            report.constants = Some(k);
        }
        Err(e) => report.error = Some(e.to_string()),
    }
    report
}

fn averaged_report(base: TdBoundInputs, schedule: &StepSchedule, n: f64) -> AveragedBoundReport {
    let (c0, c, alpha) = schedule_params(schedule);
    let mut report = AveragedBoundReport {
        c0,
        c,
        alpha: alpha.unwrap_or(f64::NAN),
        constants: None,
        k1_final: None,
        k2_final: None,
        expectation_bound_final: None,
        error: None,
    };
    let Some(alpha) = alpha else {
        report.error = Some("averaged bound requires an inverse_power schedule".into());
        return report;
    };
    let inputs = TdBoundInputs { c0, c, ..base };
    let c_big = mixing_constant(&inputs, MixingConstantForm::Theorem);
    match theorem2_constants(inputs, alpha, c_big) {
        Ok(k) => {
            report.k1_final = Some(k.k1(n));
            report.k2_final = (n > k.n0).then(|| k.k2(n));
            report.expectation_bound_final = Some(k.expectation_bound(n));
            report.constants = Some(k);
        }
        Err(e) => report.error = Some(e.to_string()),
    }
    report
}

/// Evaluate all bound constants for the algorithms in `spec`.
pub fn bound_report(spec: &ExperimentSpec, problem: &Problem) -> Result<BoundReport> {
    let profile = mixing_report(spec, problem)?;
    let base = bound_inputs(spec, problem, &profile);
    let n = spec.n_iterations as f64;
    let mut report = BoundReport {
        mu: base.mu,
        beta: base.beta,
        d: base.d,
        start_state: spec.start_state,
        delta: spec.delta,
        n_iterations: spec.n_iterations,
        theta0_norm: base.theta0_norm,
        theta_star_norm: base.theta_star_norm,
        mixing: MixingSummary {
            rho: profile.rho,
            c_geo: profile.c_geo,
            b_start: base.b_mix,
            b_prime: base.b_prime,
        },
        td0: None,
        td0_avg: None,
        ctd: None,
    };
    for alg in &spec.algorithms {
        match alg {
            AlgorithmSpec::Td0 { schedule, .. } => report.td0 = Some(td_report(base, schedule, n)),
            AlgorithmSpec::Td0Avg { schedule, .. } => report.td0_avg = Some(averaged_report(base, schedule, n)),
            AlgorithmSpec::Ctd { gamma, epoch_length, radius, .. } => {
                let radius = radius.unwrap_or_else(|| CtdConfig::default_radius(&problem.mrp, base.mu));
                let k = theorem3_constants(base.mu, base.beta, *gamma, *epoch_length, base.d, radius, profile.rho);
                report.ctd = Some(CtdBoundReport {
                    min_epoch_length_c1_0_9: min_epoch_length(base.mu, base.beta, *gamma, base.d, 0.9),
                    error: k.as_ref().err().map(|e| e.to_string()),
                    constants: k.ok(),
                });
            }
        }
    }
    Ok(report)
}
