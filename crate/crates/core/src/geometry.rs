//! Feature geometry and exact solutions of the projected Bellman equation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::chain::{MarkovRewardProcess, StationaryDistribution};
use crate::error::{Error, Result};

/// Feature matrix `Phi` (one row `phi(s)^T` per state).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    phi: DMatrix<f64>,
    // Row-major copy for fast per-state access in the estimator loops.
    rows: Vec<f64>,
    rank: usize,
}

fn numerical_rank(m: &DMatrix<f64>) -> usize {
    let svd = m.clone().svd(false, false);
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    let tol = smax * f64::EPSILON * (m.nrows().max(m.ncols()) as f64);
    svd.singular_values.iter().filter(|s| **s > tol).count()
}

impl FeatureMap {
    /// Build from an `S x d` matrix, requiring full column rank.
    pub fn new(phi: DMatrix<f64>) -> Result<Self> {
        let fm = Self::new_unchecked(phi)?;
        if fm.rank < fm.dim() {
            return Err(Error::RankDeficientFeatures {
                rank: fm.rank,
                d: fm.dim(),
            });
        }
        Ok(fm)
    }

    /// Build without the rank requirement; the rank is still computed.
    pub fn new_unchecked(phi: DMatrix<f64>) -> Result<Self> {
        if phi.nrows() == 0 || phi.ncols() == 0 {
            return Err(Error::InvalidModel("feature matrix is empty".into()));
        }
        if phi.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidModel("feature matrix has non-finite entries".into()));
        }
        let (s, d) = phi.shape();
        let rows = (0..s).flat_map(|i| (0..d).map(move |k| (i, k))).map(|(i, k)| phi[(i, k)]).collect();
        let rank = numerical_rank(&phi);
        Ok(Self { phi, rows, rank })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if let Some(i) = rows.iter().position(|r| r.len() != d) {
            return Err(Error::InvalidModel(format!(
                "feature row {i} has {} entries, expected {d}",
                rows[i].len()
            )));
        }
        Self::new(DMatrix::from_fn(rows.len(), d, |i, k| rows[i][k]))
    }

    /// Tabular features `Phi = I`.
    pub fn identity(n_states: usize) -> Self {
        Self::new(DMatrix::identity(n_states, n_states)).expect("identity has full rank")
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.phi
    }

    pub fn n_states(&self) -> usize {
        self.phi.nrows()
    }

    pub fn dim(&self) -> usize {
        self.phi.ncols()
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    /// `phi(s)` as a slice.
    #[inline]
    pub fn row(&self, s: usize) -> &[f64] {
        let d = self.dim();
        &self.rows[s * d..(s + 1) * d]
    }

    pub fn max_row_norm(&self) -> f64 {
        (0..self.n_states())
            .map(|s| self.row(s).iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    /// Check the bounded-feature assumption `|phi(s)|_2 <= 1`.
    pub fn check_strict(&self) -> Result<()> {
        let m = self.max_row_norm();
        if m > 1.0 + 1e-12 {
            return Err(Error::InvalidModel(format!(
                "strict mode: largest feature norm {m} exceeds 1"
            )));
        }
        Ok(())
    }

    /// Human-readable notes on violated boundedness assumptions.
    pub fn assumption_warnings(&self) -> Vec<String> {
        let m = self.max_row_norm();
        if m > 1.0 + 1e-12 {
            vec![format!("feature rows exceed unit norm (max {m:.4}); bound constants assume |phi(s)| <= 1")]
        } else {
            Vec::new()
        }
    }

    /// Copy rescaled so the largest row norm is 1.
    pub fn normalized(&self) -> Self {
        let m = self.max_row_norm();
        if m == 0.0 {
            return self.clone();
        }
        Self::new_unchecked(&self.phi / m).expect("scaling keeps entries finite")
    }
}

/// On-disk feature format: a list of rows or the string `"identity"`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum FeatureFile {
    Named(String),
    Rows(Vec<Vec<f64>>),
}

impl FeatureFile {
    pub fn into_features(self, n_states: usize) -> Result<FeatureMap> {
        match self {
            FeatureFile::Named(name) if name == "identity" => Ok(FeatureMap::identity(n_states)),
            FeatureFile::Named(name) => Err(Error::Parse(format!(
                "unknown feature shorthand {name:?}; expected \"identity\" or an array of rows"
            ))),
            FeatureFile::Rows(rows) => FeatureMap::from_rows(&rows),
        }
    }
}

impl From<&FeatureMap> for FeatureFile {
    fn from(f: &FeatureMap) -> Self {
        FeatureFile::Rows((0..f.n_states()).map(|s| f.row(s).to_vec()).collect())
    }
}

/// `A`, `b`, `theta*`, `mu` and the true value function for one problem.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedSystem {
    pub a_matrix: DMatrix<f64>,
    pub b_vector: DVector<f64>,
    pub theta_star: DVector<f64>,
    pub mu: f64,
    pub v_pi: DVector<f64>,
    /// `Phi^T Psi Phi`.
    pub gram: DMatrix<f64>,
    /// `|Phi theta* - Pi T(Phi theta*)|_Psi`.
    pub fixed_point_residual: f64,
}

/// Distance of an iterate from `theta*` in the three metrics the harness reports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorMetrics {
    /// `|theta - theta*|_2`
    pub param: f64,
    /// `|Phi (theta - theta*)|_Psi`
    pub value: f64,
    /// `value / |Phi theta*|_Psi`; equals `value` when `Phi theta* = 0`.
    pub normalized: f64,
}

impl ProjectedSystem {
    pub fn dim(&self) -> usize {
        self.theta_star.len()
    }

    /// `sqrt(x^T Phi^T Psi Phi x)`.
    pub fn feature_psi_norm(&self, x: &[f64]) -> f64 {
        let d = self.dim();
        let mut acc = 0.0;
        for i in 0..d {
            for j in 0..d {
                acc += x[i] * self.gram[(i, j)] * x[j];
            }
        }
        acc.max(0.0).sqrt()
    }

    pub fn errors(&self, theta: &[f64]) -> ErrorMetrics {
        let diff: Vec<f64> = theta
            .iter()
            .zip(self.theta_star.iter())
            .map(|(a, b)| a - b)
            .collect();
        let param = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
        let value = self.feature_psi_norm(&diff);
        let scale = self.feature_psi_norm(self.theta_star.as_slice());
        let normalized = if scale > 0.0 { value / scale } else { value };
        ErrorMetrics {
            param,
            value,
            normalized,
        }
    }
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

fn gram_matrix(features: &FeatureMap, psi: &StationaryDistribution) -> DMatrix<f64> {
    let phi = features.matrix();
    let weighted = DMatrix::from_fn(phi.nrows(), phi.ncols(), |i, k| psi.psi()[i] * phi[(i, k)]);
    phi.transpose() * weighted
}

/// `|v|_Psi = sqrt(sum_s psi_s v_s^2)`.
pub fn psi_norm(v: &DVector<f64>, psi: &StationaryDistribution) -> Result<f64> {
    check_len(psi.len(), v.len())?;
    Ok(v.iter()
        .zip(psi.psi().iter())
        .map(|(x, p)| p * x * x)
        .sum::<f64>()
        .sqrt())
}

/// Bellman operator `T(v) = r + beta P v`.
pub fn bellman_apply(mrp: &MarkovRewardProcess, v: &DVector<f64>) -> Result<DVector<f64>> {
    check_len(mrp.n_states(), v.len())?;
    Ok(mrp.reward() + mrp.transition() * v * mrp.discount())
}

fn weighted_projection_coeffs(
    v: &DVector<f64>,
    features: &FeatureMap,
    psi: &StationaryDistribution,
    gram: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    let rhs = features.matrix().transpose() * v.component_mul(psi.psi());
    gram.clone()
        .cholesky()
        .map(|c| c.solve(&rhs))
        .ok_or(Error::RankDeficientFeatures {
            rank: features.rank(),
            d: features.dim(),
        })
}

/// Psi-weighted orthogonal projection onto the span of `Phi`.
pub fn project(
    v: &DVector<f64>,
    features: &FeatureMap,
    psi: &StationaryDistribution,
) -> Result<DVector<f64>> {
    check_len(features.n_states(), v.len())?;
    check_len(features.n_states(), psi.len())?;
    if features.rank() < features.dim() {
        return Err(Error::RankDeficientFeatures {
            rank: features.rank(),
            d: features.dim(),
        });
    }
    let gram = gram_matrix(features, psi);
    let coeffs = weighted_projection_coeffs(v, features, psi, &gram)?;
    Ok(features.matrix() * coeffs)
}

/// Assemble `A = Phi^T Psi (I - beta P) Phi`, `b = Phi^T Psi r` and solve for `theta*`.
pub fn build_system(
    mrp: &MarkovRewardProcess,
    features: &FeatureMap,
    psi: &StationaryDistribution,
) -> Result<ProjectedSystem> {
    let s = mrp.n_states();
    check_len(s, features.n_states())?;
    check_len(s, psi.len())?;
    if features.rank() < features.dim() {
        return Err(Error::RankDeficientFeatures {
            rank: features.rank(),
            d: features.dim(),
        });
    }
    let beta = mrp.discount();
    let phi = features.matrix();
    let psi_m = psi.as_matrix();
    let resolvent = DMatrix::<f64>::identity(s, s) - mrp.transition() * beta;

    let a_matrix = phi.transpose() * &psi_m * &resolvent * phi;
    let b_vector = phi.transpose() * &psi_m * mrp.reward();
    let gram = gram_matrix(features, psi);

    let svals = a_matrix.clone().svd(false, false).singular_values;
    let smax = svals.iter().copied().fold(0.0, f64::max);
    let smin = svals.iter().copied().fold(f64::INFINITY, f64::min);
    if !(smax > 0.0) || smin <= smax * 1e-13 {
        return Err(Error::SingularSystem);
    }
    let theta_star = a_matrix.clone().lu().solve(&b_vector).ok_or(Error::SingularSystem)?;

    let mu = gram.clone().symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min);
    if !(mu > 0.0) {
        return Err(Error::RankDeficientFeatures {
            rank: features.rank(),
            d: features.dim(),
        });
    }

    let v_pi = resolvent
        .lu()
        .solve(mrp.reward())
        .ok_or_else(|| Error::SolverFailure("I - beta P is singular".into()))?;

    let approx_value = phi * &theta_star;
    let backed_up = bellman_apply(mrp, &approx_value)?;
    let projected = features.matrix() * weighted_projection_coeffs(&backed_up, features, psi, &gram)?;
    let fixed_point_residual = psi_norm(&(approx_value - projected), psi)?;

    Ok(ProjectedSystem {
        a_matrix,
        b_vector,
        theta_star,
        mu,
        v_pi,
        gram,
        fixed_point_residual,
    })
}

/// Iterate `Phi theta_{k+1} = Pi T(Phi theta_k)` from `theta = 0` until successive
/// iterates differ by at most `tol` in the Euclidean norm.
pub fn projected_value_iteration(
    mrp: &MarkovRewardProcess,
    features: &FeatureMap,
    psi: &StationaryDistribution,
    tol: f64,
    max_iter: usize,
) -> Result<DVector<f64>> {
    check_len(mrp.n_states(), features.n_states())?;
    check_len(mrp.n_states(), psi.len())?;
    let gram = gram_matrix(features, psi);
    let chol = gram.cholesky().ok_or(Error::RankDeficientFeatures {
        rank: features.rank(),
        d: features.dim(),
    })?;
    let phi = features.matrix();
    let phi_t_psi = phi.transpose() * psi.as_matrix();
    let mut theta = DVector::<f64>::zeros(features.dim());
    for _ in 0..max_iter {
        let backed_up = bellman_apply(mrp, &(phi * &theta))?;
        let next = chol.solve(&(&phi_t_psi * backed_up));
        let step = (&next - &theta).norm();
        theta = next;
        if step <= tol {
            return Ok(theta);
        }
    }
    Err(Error::MaxIterExceeded(max_iter))
}

/// Exact stationary mean of the TD increment,
/// `sum_s psi(s) sum_s' P(s,s') (r(s) + beta theta^T phi(s') - theta^T phi(s)) phi(s)`,
/// evaluated term by term (no use of `A` or `b`).
pub fn expected_increment(
    mrp: &MarkovRewardProcess,
    features: &FeatureMap,
    psi: &StationaryDistribution,
    theta: &DVector<f64>,
) -> Result<DVector<f64>> {
    let s_count = mrp.n_states();
    check_len(s_count, features.n_states())?;
    check_len(features.dim(), theta.len())?;
    let beta = mrp.discount();
    let dot = |s: usize| -> f64 { features.row(s).iter().zip(theta.iter()).map(|(a, b)| a * b).sum() };
    let values: Vec<f64> = (0..s_count).map(dot).collect();
    let mut out = DVector::<f64>::zeros(features.dim());
    for s in 0..s_count {
        let weight = psi.psi()[s];
        if weight == 0.0 {
            continue;
        }
        let mut td_error = 0.0;
        for s_next in 0..s_count {
            let p = mrp.transition()[(s, s_next)];
            if p > 0.0 {
                td_error += p * (mrp.reward()[s] + beta * values[s_next] - values[s]);
            }
        }
        for (k, f) in features.row(s).iter().enumerate() {
            out[k] += weight * td_error * f;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{random_mrp, stationary_distribution};
    use approx::assert_abs_diff_eq;

    fn example1() -> (MarkovRewardProcess, FeatureMap, StationaryDistribution) {
        let mrp = MarkovRewardProcess::from_rows(&[vec![0.2, 0.8], vec![0.3, 0.7]], &[1.0, 2.0], 0.9).unwrap();
        let f = FeatureMap::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        let psi = stationary_distribution(&mrp).unwrap();
        (mrp, f, psi)
    }

    #[test]
    fn rank_deficient_features_rejected() {
        let err = FeatureMap::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0], vec![3.0, 6.0]]).unwrap_err();
        assert_eq!(err, Error::RankDeficientFeatures { rank: 1, d: 2 });
        assert!(FeatureMap::from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn feature_file_shorthand() {
        let f: FeatureFile = serde_json::from_str("\"identity\"").unwrap();
        assert_eq!(f.into_features(3).unwrap(), FeatureMap::identity(3));
        let f: FeatureFile = serde_json::from_str("[[1.0],[2.0]]").unwrap();
        assert_eq!(f.into_features(2).unwrap().dim(), 1);
        let f: FeatureFile = serde_json::from_str("\"tabular\"").unwrap();
        assert!(f.into_features(2).is_err());
    }

    #[test]
    fn normalization_and_warnings() {
        let (_, f, _) = example1();
        assert_eq!(f.assumption_warnings().len(), 1);
        assert!(f.check_strict().is_err());
        let n = f.normalized();
        assert_abs_diff_eq!(n.max_row_norm(), 1.0, epsilon = 1e-15);
        assert!(n.assumption_warnings().is_empty());
        n.check_strict().unwrap();
    }

    #[test]
    fn psi_norm_examples() {
        let (_, _, psi) = example1();
        assert_eq!(psi_norm(&DVector::zeros(2), &psi).unwrap(), 0.0);
        let uniform = StationaryDistribution::from_vector(DVector::from_vec(vec![0.5, 0.5])).unwrap();
        assert_abs_diff_eq!(psi_norm(&DVector::from_vec(vec![1.0, 1.0]), &uniform).unwrap(), 1.0, epsilon = 1e-15);
        let v = DVector::from_vec(vec![1.0, 2.0]);
        assert_abs_diff_eq!(psi_norm(&v, &psi).unwrap(), (35.0f64 / 11.0).sqrt(), epsilon = 1e-14);
        assert!(matches!(psi_norm(&DVector::zeros(3), &psi), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn bellman_examples() {
        let (mrp, _, _) = example1();
        let one = bellman_apply(&mrp, &DVector::zeros(2)).unwrap();
        assert_eq!(one.as_slice(), &[1.0, 2.0]);
        let two = bellman_apply(&mrp, &one).unwrap();
        // (1,2) + 0.9 * (0.2 + 1.6, 0.3 + 1.4)
        assert_abs_diff_eq!(two[0], 1.0 + 0.9 * 1.8, epsilon = 1e-14);
        assert_abs_diff_eq!(two[1], 2.0 + 0.9 * 1.7, epsilon = 1e-14);
        let sys = build_system(&mrp, &FeatureMap::identity(2), &stationary_distribution(&mrp).unwrap()).unwrap();
        let fixed = bellman_apply(&mrp, &sys.v_pi).unwrap();
        assert_abs_diff_eq!((fixed - &sys.v_pi).amax(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn projection_examples() {
        let (_, f, psi) = example1();
        let v = DVector::from_vec(vec![3.0, 6.0]);
        let pv = project(&v, &f, &psi).unwrap();
        assert_abs_diff_eq!((pv - v).amax(), 0.0, epsilon = 1e-10);
        let w = DVector::from_vec(vec![0.3, -7.0]);
        let pw = project(&w, &FeatureMap::identity(2), &psi).unwrap();
        assert_abs_diff_eq!((pw - w).amax(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn tabular_system_recovers_value_function() {
        let mrp = random_mrp(6, 0.8, 4).unwrap();
        let psi = stationary_distribution(&mrp).unwrap();
        let sys = build_system(&mrp, &FeatureMap::identity(6), &psi).unwrap();
        assert_abs_diff_eq!((&sys.theta_star - &sys.v_pi).amax(), 0.0, epsilon = 1e-10);
        let pvi = projected_value_iteration(&mrp, &FeatureMap::identity(6), &psi, 1e-13, 10_000).unwrap();
        assert_abs_diff_eq!((pvi - &sys.v_pi).amax(), 0.0, epsilon = 1e-10);
    }

    #[test]
    fn zero_reward_system() {
        let mrp = MarkovRewardProcess::from_rows(&[vec![0.2, 0.8], vec![0.3, 0.7]], &[0.0, 0.0], 0.9).unwrap();
        let psi = stationary_distribution(&mrp).unwrap();
        let f = FeatureMap::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        let sys = build_system(&mrp, &f, &psi).unwrap();
        assert_eq!(sys.theta_star[0], 0.0);
        assert_eq!(sys.v_pi.amax(), 0.0);
        let pvi = projected_value_iteration(&mrp, &f, &psi, 1e-12, 1).unwrap();
        assert_eq!(pvi[0], 0.0);
    }

    #[test]
    fn example1_against_dense_oracle() {
        // Scalar closed form: A = sum_s psi_s phi_s (phi_s - beta (P phi)_s), b = sum_s psi_s phi_s r_s.
        let psi = [3.0 / 11.0, 8.0 / 11.0];
        let phi = [1.0, 2.0];
        let p_phi = [0.2 * 1.0 + 0.8 * 2.0, 0.3 * 1.0 + 0.7 * 2.0];
        let a: f64 = (0..2).map(|s| psi[s] * phi[s] * (phi[s] - 0.9 * p_phi[s])).sum();
        let b: f64 = (0..2).map(|s| psi[s] * phi[s] * [1.0, 2.0][s]).sum();
        let (mrp, f, stat) = example1();
        let sys = build_system(&mrp, &f, &stat).unwrap();
        assert_abs_diff_eq!(sys.a_matrix[(0, 0)], a, epsilon = 1e-13);
        assert_abs_diff_eq!(sys.b_vector[0], b, epsilon = 1e-13);
        assert_abs_diff_eq!(sys.theta_star[0], b / a, epsilon = 1e-12);
        assert_abs_diff_eq!(sys.mu, 35.0 / 11.0, epsilon = 1e-12);
        assert!(sys.fixed_point_residual <= 1e-9);
        let pvi = projected_value_iteration(&mrp, &f, &stat, 1e-12, 100_000).unwrap();
        assert_abs_diff_eq!(pvi[0], sys.theta_star[0], epsilon = 1e-8);
    }

    #[test]
    fn pvi_iteration_cap() {
        let (mrp, f, psi) = example1();
        assert_eq!(projected_value_iteration(&mrp, &f, &psi, 1e-14, 3), Err(Error::MaxIterExceeded(3)));
    }

    #[test]
    fn expected_increment_vanishes_at_fixed_point() {
        let (mrp, f, psi) = example1();
        let sys = build_system(&mrp, &f, &psi).unwrap();
        let e = expected_increment(&mrp, &f, &psi, &sys.theta_star).unwrap();
        assert_abs_diff_eq!(e[0], 0.0, epsilon = 1e-10);
    }

    #[test]
    fn error_metrics() {
        let (mrp, f, psi) = example1();
        let sys = build_system(&mrp, &f, &psi).unwrap();
        let e = sys.errors(&[0.0]);
        assert_abs_diff_eq!(e.param, sys.theta_star[0], epsilon = 1e-14);
        assert_abs_diff_eq!(e.normalized, 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(e.value, sys.theta_star[0] * (35.0f64 / 11.0).sqrt(), epsilon = 1e-12);
    }
}
