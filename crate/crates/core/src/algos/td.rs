use nalgebra::DVector;

use crate::chain::MarkovRewardProcess;
use crate::error::{Error, Result};
use crate::geometry::FeatureMap;

use super::StepSchedule;

/// TD error `r(s) + beta theta^T phi(s') - theta^T phi(s)`.
#[inline]
pub fn td_error(
    mrp: &MarkovRewardProcess,
    features: &FeatureMap,
    s: usize,
    s_next: usize,
    theta: &[f64],
) -> f64 {
    let phi = features.row(s);
    let phi_next = features.row(s_next);
    let mut v = 0.0;
    let mut v_next = 0.0;
    for k in 0..theta.len() {
        v += theta[k] * phi[k];
        v_next += theta[k] * phi_next[k];
    }
    mrp.reward()[s] + mrp.discount() * v_next - v
}

/// `f_X(theta) = (r(s) + beta theta^T phi(s') - theta^T phi(s)) phi(s)` for `X = (s, s')`.
#[derive(Debug, Clone, PartialEq)]
pub struct TdIncrement(pub DVector<f64>);

pub fn td_increment(
    mrp: &MarkovRewardProcess,
    features: &FeatureMap,
    s: usize,
    s_next: usize,
    theta: &DVector<f64>,
) -> Result<TdIncrement> {
    let n = mrp.n_states();
    if features.n_states() != n {
        return Err(Error::DimensionMismatch { expected: n, got: features.n_states() });
    }
    if theta.len() != features.dim() {
        return Err(Error::DimensionMismatch { expected: features.dim(), got: theta.len() });
    }
    if s >= n || s_next >= n {
        return Err(Error::InvalidModel(format!("state pair ({s}, {s_next}) out of range")));
    }
    let delta = td_error(mrp, features, s, s_next, theta.as_slice());
    Ok(TdIncrement(DVector::from_iterator(
        features.dim(),
        features.row(s).iter().map(|f| delta * f),
    )))
}

/// TD(0) iterate `theta_n`, the running mean of `theta_1..theta_n`, and `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct TdState {
    pub theta: DVector<f64>,
    pub theta_bar: DVector<f64>,
    pub n: u64,
}

impl TdState {
    pub fn new(theta0: DVector<f64>) -> Self {
        Self {
            theta_bar: theta0.clone(),
            theta: theta0,
            n: 0,
        }
    }

    /// `theta_{n+1} = theta_n + gamma_n * increment`, then fold `theta_{n+1}` into the mean.
    pub fn advance(&mut self, schedule: &StepSchedule, increment: &TdIncrement) {
        let gamma = schedule.gamma(self.n);
        self.apply(gamma, increment.0.as_slice());
    }

    #[inline]
    pub(crate) fn apply(&mut self, gamma: f64, increment: &[f64]) {
        self.n += 1;
        let w = 1.0 / self.n as f64;
        let theta = self.theta.as_mut_slice();
        let bar = self.theta_bar.as_mut_slice();
        for k in 0..theta.len() {
            theta[k] += gamma * increment[k];
            bar[k] += (theta[k] - bar[k]) * w;
        }
    }

    /// One TD(0) update from the transition `(s, s_next)`.
    #[inline]
    pub(crate) fn step_on(
        &mut self,
        mrp: &MarkovRewardProcess,
        features: &FeatureMap,
        gamma: f64,
        s: usize,
        s_next: usize,
    ) {
        let delta = td_error(mrp, features, s, s_next, self.theta.as_slice());
        let phi = features.row(s);
        self.n += 1;
        let w = 1.0 / self.n as f64;
        let theta = self.theta.as_mut_slice();
        let bar = self.theta_bar.as_mut_slice();
        for k in 0..theta.len() {
            theta[k] += gamma * delta * phi[k];
            bar[k] += (theta[k] - bar[k]) * w;
        }
    }
}
