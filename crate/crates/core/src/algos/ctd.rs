use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::chain::MarkovRewardProcess;
use crate::error::{Error, Result};
use crate::geometry::FeatureMap;

use super::td::td_error;

/// Which transition drives the centered update inside an epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleMode {
    /// The fresh transition observed at this step.
    #[default]
    Online,
    /// A transition redrawn uniformly from the samples the centering vector was built on.
    ResampleStored,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CtdConfig {
    /// Constant step size.
    pub gamma: f64,
    /// Epoch length `M`.
    pub epoch_length: usize,
    /// Projection radius `H`; `f64::INFINITY` disables projection.
    pub radius: f64,
    pub sample_mode: SampleMode,
}

impl CtdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidSpec(format!("ctd: gamma = {} must be positive", self.gamma)));
        }
        if self.epoch_length == 0 {
            return Err(Error::InvalidSpec("ctd: epoch_length must be at least 1".into()));
        }
        if !(self.radius > 0.0) {
            return Err(Error::InvalidSpec(format!("ctd: radius = {} must be positive", self.radius)));
        }
        Ok(())
    }

    /// `H = 2 (1 + |r|_inf) / (mu (1 - beta))`.
    pub fn default_radius(mrp: &MarkovRewardProcess, mu: f64) -> f64 {
        let r_inf = mrp.reward().amax();
        2.0 * (1.0 + r_inf) / (mu * (1.0 - mrp.discount()))
    }
}

/// State of the centered TD recursion.
///
/// Epoch 0 has no centering vector yet and runs plain constant-step TD(0)
/// (projected onto the `H`-ball); it still fills the buffers so the first
/// anchor and centering vector are available from epoch 1 onward.
#[derive(Debug, Clone, PartialEq)]
pub struct CtdState {
    pub theta: DVector<f64>,
    /// Anchor of the current epoch.
    pub theta_bar_epoch: DVector<f64>,
    /// Centering vector at the anchor; `None` during epoch 0.
    pub f_hat: Option<DVector<f64>>,
    pub epoch_index: usize,
    /// Transitions observed in the current epoch.
    pub epoch_samples: Vec<(usize, usize)>,
    /// Iterates visited in the current epoch, flattened (`epoch_length x d`).
    within_epoch_iterates: Vec<f64>,
    /// Transitions `f_hat` was averaged over (previous epoch).
    pub anchor_samples: Vec<(usize, usize)>,
    pub config: CtdConfig,
    scratch: Vec<f64>,
}

impl CtdState {
    pub fn new(theta0: DVector<f64>, config: CtdConfig) -> Result<Self> {
        config.validate()?;
        let d = theta0.len();
        Ok(Self {
            theta_bar_epoch: theta0.clone(),
            theta: theta0,
            f_hat: None,
            epoch_index: 0,
            epoch_samples: Vec::with_capacity(config.epoch_length),
            within_epoch_iterates: Vec::with_capacity(config.epoch_length * d),
            anchor_samples: Vec::new(),
            config,
            scratch: vec![0.0; d],
        })
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn epoch_full(&self) -> bool {
        self.epoch_samples.len() >= self.config.epoch_length
    }

    /// The `i`-th iterate stored in the current epoch.
    pub fn stored_iterate(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.within_epoch_iterates[i * d..(i + 1) * d]
    }

    pub fn stored_iterates(&self) -> usize {
        self.within_epoch_iterates.len() / self.dim().max(1)
    }

    /// Euclidean projection onto the ball of radius `H`.
    pub fn project_ball(x: &mut [f64], radius: f64) {
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > radius {
            let scale = radius / norm;
            x.iter_mut().for_each(|v| *v *= scale);
        }
    }

    /// One centered update driven by the observed transition `(s, s_next)`:
    /// `theta <- proj_H(theta + gamma (f_X(theta) - f_X(anchor) + f_hat))`.
    ///
    /// The current iterate and the transition are appended to the epoch buffers
    /// before the update.
    pub fn step<R: Rng + ?Sized>(
        &mut self,
        mrp: &MarkovRewardProcess,
        features: &FeatureMap,
        s: usize,
        s_next: usize,
        rng: &mut R,
    ) {
        let d = self.dim();
        self.within_epoch_iterates.extend_from_slice(self.theta.as_slice());
        self.epoch_samples.push((s, s_next));
        let gamma = self.config.gamma;

        match &self.f_hat {
            None => {
                let delta = td_error(mrp, features, s, s_next, self.theta.as_slice());
                let phi = features.row(s);
                for k in 0..d {
                    self.theta[k] += gamma * delta * phi[k];
                }
            }
            Some(f_hat) => {
                let (xs, xn) = match self.config.sample_mode {
                    SampleMode::Online => (s, s_next),
                    SampleMode::ResampleStored => {
                        self.anchor_samples[rng.random_range(0..self.anchor_samples.len())]
                    }
                };
                let delta = td_error(mrp, features, xs, xn, self.theta.as_slice());
                let delta_anchor = td_error(mrp, features, xs, xn, self.theta_bar_epoch.as_slice());
                let phi = features.row(xs);
                for k in 0..d {
                    self.scratch[k] = delta * phi[k] - delta_anchor * phi[k] + f_hat[k];
                }
                for k in 0..d {
                    self.theta[k] += gamma * self.scratch[k];
                }
            }
        }
        Self::project_ball(self.theta.as_mut_slice(), self.config.radius);
    }

    /// Close the current epoch: draw the next anchor uniformly from the stored
    /// iterates, rebuild the centering vector over the stored transitions,
    /// restart the iterate at the anchor and clear the buffers.
    pub fn epoch_transition<R: Rng + ?Sized>(
        &mut self,
        mrp: &MarkovRewardProcess,
        features: &FeatureMap,
        rng: &mut R,
    ) -> Result<()> {
        let m = self.config.epoch_length;
        if self.epoch_samples.len() != m || self.stored_iterates() != m {
            return Err(Error::EpochBufferIncomplete {
                have: self.epoch_samples.len().min(self.stored_iterates()),
                need: m,
            });
        }
        let pick = rng.random_range(0..m);
        let anchor = DVector::from_column_slice(self.stored_iterate(pick));
        self.f_hat = Some(centering_vector(mrp, features, &self.epoch_samples, &anchor));
        self.theta_bar_epoch = anchor.clone();
        self.theta = anchor;
        self.anchor_samples = std::mem::take(&mut self.epoch_samples);
        self.epoch_samples.reserve(m);
        self.within_epoch_iterates.clear();
        self.epoch_index += 1;
        Ok(())
    }
}

/// `M^{-1} sum_i f_{X_i}(theta)` over the given transitions.
pub fn centering_vector(
    mrp: &MarkovRewardProcess,
    features: &FeatureMap,
    samples: &[(usize, usize)],
    theta: &DVector<f64>,
) -> DVector<f64> {
    let mut acc = DVector::<f64>::zeros(theta.len());
    for &(s, s_next) in samples {
        let delta = td_error(mrp, features, s, s_next, theta.as_slice());
        for (k, f) in features.row(s).iter().enumerate() {
            acc[k] += delta * f;
        }
    }
    acc / samples.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algos::td_increment;
    use crate::chain::{random_mrp, stationary_distribution, TransitionSampler};
    use crate::geometry::build_system;
    use crate::rng::stream_rng;
    use proptest::prelude::*;

    fn example1() -> (MarkovRewardProcess, FeatureMap) {
        (
            MarkovRewardProcess::from_rows(&[vec![0.2, 0.8], vec![0.3, 0.7]], &[1.0, 2.0], 0.9).unwrap(),
            FeatureMap::from_rows(&[vec![1.0], vec![2.0]]).unwrap(),
        )
    }

    fn config(gamma: f64, m: usize, radius: f64) -> CtdConfig {
        CtdConfig { gamma, epoch_length: m, radius, sample_mode: SampleMode::Online }
    }

    fn with_epoch(
        mrp: &MarkovRewardProcess,
        f: &FeatureMap,
        cfg: CtdConfig,
        theta0: f64,
        seed: u64,
    ) -> CtdState {
        let mut st = CtdState::new(DVector::from_vec(vec![theta0]), cfg).unwrap();
        let sampler = TransitionSampler::new(mrp);
        let mut rng = stream_rng(seed, 0);
        let mut s = 0;
        for _ in 0..cfg.epoch_length {
            let n = sampler.next_state(s, &mut rng);
            st.step(mrp, f, s, n, &mut rng);
            s = n;
        }
        st
    }

    #[test]
    fn incomplete_epoch_is_rejected() {
        let (mrp, f) = example1();
        let mut st = CtdState::new(DVector::zeros(1), config(0.1, 3, f64::INFINITY)).unwrap();
        let mut rng = stream_rng(0, 0);
        st.step(&mrp, &f, 0, 1, &mut rng);
        assert_eq!(
            st.epoch_transition(&mrp, &f, &mut rng),
            Err(Error::EpochBufferIncomplete { have: 1, need: 3 })
        );
    }

    #[test]
    fn identical_iterates_give_that_anchor() {
        let (_, f) = example1();
        // zero rewards and theta = 0 keep every iterate at the origin
        let zero = MarkovRewardProcess::from_rows(&[vec![0.2, 0.8], vec![0.3, 0.7]], &[0.0, 0.0], 0.9).unwrap();
        for seed in 0..5 {
            let mut st = with_epoch(&zero, &f, config(0.1, 10, f64::INFINITY), 0.0, seed);
            st.epoch_transition(&zero, &f, &mut stream_rng(seed, 1)).unwrap();
            assert_eq!(st.theta_bar_epoch[0], 0.0);
            assert_eq!(st.theta[0], 0.0);
            assert_eq!(st.epoch_index, 1);
            assert!(st.epoch_samples.is_empty());
        }
    }

    #[test]
    fn single_sample_epoch() {
        let (mrp, f) = example1();
        let mut st = CtdState::new(DVector::from_vec(vec![2.0]), config(0.1, 1, f64::INFINITY)).unwrap();
        let mut rng = stream_rng(3, 0);
        st.step(&mrp, &f, 1, 0, &mut rng);
        st.epoch_transition(&mrp, &f, &mut rng).unwrap();
        assert_eq!(st.theta_bar_epoch[0], 2.0);
        let expected = td_increment(&mrp, &f, 1, 0, &DVector::from_vec(vec![2.0])).unwrap();
        assert_eq!(st.f_hat.as_ref().unwrap()[0], expected.0[0]);
        assert_eq!(st.anchor_samples, vec![(1, 0)]);
    }

    #[test]
    fn update_at_anchor_is_pure_centering() {
        let (mrp, f) = example1();
        let mut st = with_epoch(&mrp, &f, config(0.05, 20, f64::INFINITY), 1.0, 9);
        st.epoch_transition(&mrp, &f, &mut stream_rng(9, 1)).unwrap();
        let before = st.theta[0];
        let f_hat = st.f_hat.as_ref().unwrap()[0];
        st.step(&mrp, &f, 1, 1, &mut stream_rng(0, 0));
        assert!((st.theta[0] - (before + 0.05 * f_hat)).abs() < 1e-15);
    }

    #[test]
    fn zero_centering_matches_td() {
        let zero = MarkovRewardProcess::from_rows(&[vec![0.2, 0.8], vec![0.3, 0.7]], &[0.0, 0.0], 0.9).unwrap();
        let (_, f) = example1();
        let mut st = CtdState::new(DVector::from_vec(vec![1.3]), config(0.07, 5, f64::INFINITY)).unwrap();
        st.f_hat = Some(DVector::zeros(1));
        st.theta_bar_epoch = DVector::zeros(1);
        let inc = td_increment(&zero, &f, 1, 0, &st.theta).unwrap();
        let expect = st.theta[0] + 0.07 * inc.0[0];
        st.step(&zero, &f, 1, 0, &mut stream_rng(0, 0));
        assert!((st.theta[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn projection_contract() {
        let mut x = [6.0, 8.0];
        CtdState::project_ball(&mut x, 5.0);
        let n = (x[0] * x[0] + x[1] * x[1]).sqrt();
        assert!((n - 5.0).abs() < 1e-14);
        assert!((x[0] - 3.0).abs() < 1e-14);
        let mut y = [0.3, 0.4];
        CtdState::project_ball(&mut y, 1.0);
        assert_eq!(y, [0.3, 0.4]);
    }

    #[test]
    fn centering_vanishes_at_fixed_point_for_long_epochs() {
        let (mrp, f) = example1();
        let psi = stationary_distribution(&mrp).unwrap();
        let sys = build_system(&mrp, &f, &psi).unwrap();
        let sampler = TransitionSampler::new(&mrp);
        let mut rng = stream_rng(77, 0);
        let mut s = 0;
        let mut samples = Vec::new();
        let mut last = f64::INFINITY;
        for m in [1_000usize, 100_000, 1_000_000] {
            while samples.len() < m {
                let n = sampler.next_state(s, &mut rng);
                samples.push((s, n));
                s = n;
            }
            let fh = centering_vector(&mrp, &f, &samples, &sys.theta_star)[0].abs();
            // sd of the increment is about 5.4; allow four standard errors
            assert!(fh < 4.0 * 5.4 / (m as f64).sqrt() + 1e-3, "M = {m}: {fh}");
            last = fh;
        }
        assert!(last < 0.03);
    }

    #[test]
    fn resample_mode_draws_from_stored_samples() {
        let (mrp, f) = example1();
        let mut cfg = config(0.05, 10, f64::INFINITY);
        cfg.sample_mode = SampleMode::ResampleStored;
        let mut st = with_epoch(&mrp, &f, cfg, 0.0, 5);
        st.epoch_transition(&mrp, &f, &mut stream_rng(5, 1)).unwrap();
        let mut rng = stream_rng(5, 2);
        for _ in 0..10 {
            st.step(&mrp, &f, 0, 0, &mut rng);
        }
        assert!(st.epoch_full());
        assert!(st.theta[0].is_finite());
    }

    proptest! {
        #[test]
        fn iterates_stay_in_ball(seed in 0u64..500, radius in 0.1f64..5.0, gamma in 0.01f64..0.5) {
            let mrp = random_mrp(6, 0.9, seed).unwrap();
            let f = FeatureMap::from_rows(&(0..6).map(|i| vec![1.0, (i as f64).sin()]).collect::<Vec<_>>()).unwrap();
            let mut st = CtdState::new(DVector::zeros(2), config(gamma, 7, radius)).unwrap();
            let sampler = TransitionSampler::new(&mrp);
            let mut rng = stream_rng(seed, 0);
            let mut s = 0;
            for _ in 0..200 {
                let n = sampler.next_state(s, &mut rng);
                st.step(&mrp, &f, s, n, &mut rng);
                prop_assert!(st.theta.norm() <= radius * (1.0 + 1e-12));
                if st.epoch_full() {
                    st.epoch_transition(&mrp, &f, &mut rng).unwrap();
                    prop_assert!(st.theta.norm() <= radius * (1.0 + 1e-12));
                }
                s = n;
            }
        }

        #[test]
        fn bilinearity_cancellation(t in -10.0f64..10.0, u in -10.0f64..10.0, a in -10.0f64..10.0, b in -10.0f64..10.0, s in 0usize..2, sn in 0usize..2) {
            let (mrp, _) = example1();
            let f = FeatureMap::from_rows(&[vec![1.0, 0.5], vec![2.0, -1.0]]).unwrap();
            let theta = DVector::from_vec(vec![t, u]);
            let anchor = DVector::from_vec(vec![a, b]);
            let lhs = td_increment(&mrp, &f, s, sn, &theta).unwrap().0 - td_increment(&mrp, &f, s, sn, &anchor).unwrap().0;
            let dir: f64 = (0..2).map(|k| (0.9 * f.row(sn)[k] - f.row(s)[k]) * (theta[k] - anchor[k])).sum();
            for k in 0..2 {
                prop_assert!((lhs[k] - dir * f.row(s)[k]).abs() <= 1e-12 * (1.0 + lhs[k].abs()));
            }
        }
    }
}
