//! Closed-form bound constants for TD(0), averaged TD(0) and CTD, and the
//! step-size admissibility checks that go with them.
//!
//! Notation: `mu` is the smallest eigenvalue of `Phi^T Psi Phi`, `beta` the
//! discount, `d` the feature dimension, and `B(s0)` / `B'` the mixing sums
//! from [`crate::chain::mixing_profile`].

use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma_ur, ln_gamma};

use crate::error::{Error, Result};

/// Margins of the two inequalities required of `gamma_n = c0 c / (c + n)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TdAdmissibility {
    pub admissible: bool,
    /// `mu (1 - beta) / (2 (1 + beta)^2)`, the strict upper limit on `c0`.
    pub c0_limit: f64,
    /// `c0_limit - c0`; positive when the first inequality holds.
    pub c0_margin: f64,
    /// `mu (1 - beta) c0 c`, required to exceed 1.
    pub rate_product: f64,
    /// `rate_product - 1`.
    pub rate_margin: f64,
}

impl TdAdmissibility {
    /// Description of the first failed inequality, if any.
    pub fn failure(&self) -> Option<String> {
        if self.c0_margin <= 0.0 {
            Some(format!(
                "c0 < mu(1-beta)/(2(1+beta)^2) fails: limit is {:.6}, margin {:.6}",
                self.c0_limit, self.c0_margin
            ))
        } else if self.rate_margin <= 0.0 {
            Some(format!(
                "mu(1-beta) c0 c > 1 fails: product is {:.6}",
                self.rate_product
            ))
        } else {
            None
        }
    }
}

/// Check `c0 < mu(1-beta)/(2(1+beta)^2)` and `mu(1-beta) c0 c > 1`.
pub fn check_td_admissible(mu: f64, beta: f64, c0: f64, c: f64) -> TdAdmissibility {
    let c0_limit = mu * (1.0 - beta) / (2.0 * (1.0 + beta).powi(2));
    let rate_product = mu * (1.0 - beta) * c0 * c;
    let c0_margin = c0_limit - c0;
    let rate_margin = rate_product - 1.0;
    TdAdmissibility {
        admissible: c0_margin > 0.0 && rate_margin > 0.0,
        c0_limit,
        c0_margin,
        rate_product,
        rate_margin,
    }
}

/// Inputs shared by the TD(0) constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TdBoundInputs {
    pub mu: f64,
    pub beta: f64,
    pub c0: f64,
    pub c: f64,
    pub d: usize,
    /// `B(s0)` at the start state.
    pub b_mix: f64,
    /// Uniform mixing bound `B' = max_s B'(s)`, used by the high-probability terms.
    pub b_prime: f64,
    pub theta0_norm: f64,
    /// `|theta0 - theta*|`
    pub theta0_error: f64,
    pub theta_star_norm: f64,
    /// Confidence parameter of the high-probability bounds.
    pub delta: f64,
}

/// Which of the two printed forms of the TD(0) mixing constant `C` to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixingConstantForm {
    /// `C = 6 d B(s0) ((|theta0| + d + |theta*|)/(1-beta))^2`
    #[default]
    Theorem,
    /// `C = 2 (2 + beta)(d + 4) B(s0) ((|theta0| + d + |theta*|)/(1-beta))^2`
    Proposition,
}

/// Constants of the non-averaged TD(0) bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TdConstants {
    pub inputs: TdBoundInputs,
    pub form: MixingConstantForm,
    /// The `C` actually used in `K1`, `K2`.
    pub c_big: f64,
    pub c_big_theorem: f64,
    pub c_big_proposition: f64,
    /// `mu (1 - beta) c0 c - 1`
    pub rate_excess: f64,
}

/// The mixing constant `C` in the requested form. It does not depend on the step size.
pub fn mixing_constant(inputs: &TdBoundInputs, form: MixingConstantForm) -> f64 {
    let d = inputs.d as f64;
    let scale = ((inputs.theta0_norm + d + inputs.theta_star_norm) / (1.0 - inputs.beta)).powi(2);
    match form {
        MixingConstantForm::Theorem => 6.0 * d * inputs.b_mix * scale,
        MixingConstantForm::Proposition => 2.0 * (2.0 + inputs.beta) * (d + 4.0) * inputs.b_mix * scale,
    }
}

/// Evaluate `C`, and make `K1(n)`, `K2(n)` available, for `gamma_n = c0 c/(c + n)`.
pub fn theorem1_constants(inputs: TdBoundInputs) -> Result<TdConstants> {
    theorem1_constants_with(inputs, MixingConstantForm::Theorem)
}

pub fn theorem1_constants_with(inputs: TdBoundInputs, form: MixingConstantForm) -> Result<TdConstants> {
    let adm = check_td_admissible(inputs.mu, inputs.beta, inputs.c0, inputs.c);
    if let Some(why) = adm.failure() {
        return Err(Error::InadmissibleStepSize(why));
    }
    if !(inputs.delta > 0.0 && inputs.delta < 1.0) {
        return Err(Error::InvalidSpec(format!("delta = {} must lie in (0, 1)", inputs.delta)));
    }
    let c_big_theorem = mixing_constant(&inputs, MixingConstantForm::Theorem);
    let c_big_proposition = mixing_constant(&inputs, MixingConstantForm::Proposition);
    let c_big = match form {
        MixingConstantForm::Theorem => c_big_theorem,
        MixingConstantForm::Proposition => c_big_proposition,
    };
    Ok(TdConstants {
        inputs,
        form,
        c_big,
        c_big_theorem,
        c_big_proposition,
        rate_excess: adm.rate_margin,
    })
}

impl TdConstants {
    /// Expectation constant `K1(n)`.
    pub fn k1(&self, n: f64) -> f64 {
        let i = &self.inputs;
        let (c0, c) = (i.c0, i.c);
        let transient = c * (i.theta0_error + self.c_big) / (n + c).powf(self.rate_excess);
        let steady = ((1.0 + i.theta_star_norm) * c0 * c0 * c * c + self.c_big * c0 * c) / self.rate_excess;
        (transient + steady).sqrt()
    }

    /// High-probability constant `K2(n)`.
    pub fn k2(&self, n: f64) -> f64 {
        let i = &self.inputs;
        let cc = i.c0 * i.c;
        let inner = 2.0 * (2.0 + cc) * (1.0 + i.beta * (3.0 - i.beta)) * (1.0 / i.delta).ln();
        cc * i.b_prime * inner.sqrt() / self.rate_excess.sqrt() + self.k1(n)
    }

    /// `K1(n) / sqrt(n + c)`, the bound on `E|theta_n - theta*|`.
    pub fn expectation_bound(&self, n: f64) -> f64 {
        self.k1(n) / (n + self.inputs.c).sqrt()
    }

    pub fn high_probability_bound(&self, n: f64) -> f64 {
        self.k2(n) / (n + self.inputs.c).sqrt()
    }
}

/// Absolute accuracy targeted by the series below.
pub const SERIES_TOLERANCE: f64 = 1e-10;

/// `sum_{k>=1} k^{-s}` for `s > 1` by direct summation plus an Euler-Maclaurin
/// tail. Returns the value and a bound on the absolute error.
pub fn zeta_series(s: f64) -> Result<(f64, f64)> {
    if !(s > 1.0) {
        return Err(Error::AlphaOutOfRange(s / 2.0));
    }
    // sum_{k>=N} k^{-s} = N^{1-s}/(s-1) + N^{-s}/2
    //   + sum_j B_{2j}/(2j)! * s(s+1)...(s+2j-2) * N^{-s-2j+1} + remainder
    const BERNOULLI: [f64; 5] = [1.0 / 6.0, -1.0 / 30.0, 1.0 / 42.0, -1.0 / 30.0, 5.0 / 66.0];
    let mut n = 64u64;
    loop {
        let nf = n as f64;
        let head: f64 = (1..n).map(|k| (k as f64).powf(-s)).sum();
        let mut tail = nf.powf(1.0 - s) / (s - 1.0) + 0.5 * nf.powf(-s);
        let mut rising = s;
        let mut factorial = 2.0;
        let mut last = 0.0;
        for (j, b) in BERNOULLI.iter().enumerate() {
            let order = (2 * j + 1) as f64;
            let term = b / factorial * rising * nf.powf(-s - order);
            tail += term;
            last = term.abs();
            rising *= (s + order) * (s + order + 1.0);
            factorial *= ((2 * j + 3) * (2 * j + 4)) as f64;
        }
        let err = last + (head + tail) * f64::EPSILON * nf;
        if err <= SERIES_TOLERANCE || n > 10_000_000 {
            return Ok((head + tail, err));
        }
        n *= 4;
    }
}

/// Constants of the averaged TD(0) bounds for `gamma_n = c0 (c/(c+n))^alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AveragedConstants {
    pub inputs: TdBoundInputs,
    pub alpha: f64,
    /// `C` from the TD(0) constants (passed through).
    pub c_big: f64,
    /// `(c mu (1-beta) / (2 c0 (1+beta)^2))^{-1/alpha}`
    pub n0: f64,
    pub c_prime: f64,
    /// `sum_k k^{-2 alpha}`
    pub c_dprime: f64,
    pub c_tprime: f64,
    /// `(1 + d c0 c^alpha (c+n0)^{1-alpha}) exp((1+beta) c0 c^alpha (c+n0)^{1-alpha})`
    pub burn_in_growth: f64,
}

impl AveragedConstants {
    pub fn n0_ceil(&self) -> u64 {
        self.n0.ceil() as u64
    }

    /// `K1^IA(n)`.
    pub fn k1(&self, n: f64) -> f64 {
        let i = &self.inputs;
        let a = self.alpha;
        let (c0, c, mu, beta) = (i.c0, i.c, i.mu, i.beta);
        let first = (self.burn_in_growth + i.theta_star_norm + self.c_big) * self.c_dprime
            / (n + c).powf((1.0 - a) / 2.0);
        let second = self.n0 * (self.burn_in_growth + i.theta_star_norm) / n.powf(1.0 - a / 2.0);
        let ca_c0 = c.powf(a) * c0;
        let third = ca_c0
            * (1.0 + i.theta_star_norm.sqrt() + (self.c_big / ca_c0).sqrt())
            * (mu * (1.0 - beta) * c0 * c.powf(a) / (1.0 - a)).powf(-(a + 2.0 * a * a) / (2.0 * (1.0 - a)));
        first + second + third
    }

    /// `K2^IA(n)`.
    pub fn k2(&self, n: f64) -> f64 {
        let i = &self.inputs;
        4.0 * ((1.0 + self.c_prime) * i.b_prime).sqrt() / (i.mu * (1.0 - i.beta)) * self.c_tprime
            / n.powf((1.0 - self.alpha) / 2.0)
            + self.k1(n - self.n0)
    }

    /// `K1^IA(n) / (n + c)^{alpha/2}`, the bound on `E|mean(theta_1..theta_n) - theta*|`.
    pub fn expectation_bound(&self, n: f64) -> f64 {
        self.k1(n) / (n + self.inputs.c).powf(self.alpha / 2.0)
    }
}

/// `n0`, `C'`, `C''`, `C'''` and the averaged-iterate constants.
///
/// `C'''` is summed over `k` with the summand
/// `exp(-kappa ((k + c)^{1-alpha} - (c + n0)^{1-alpha}))`,
/// `kappa = mu c^alpha (1-beta) c0 / (2 (1-alpha))`.
pub fn theorem2_constants(inputs: TdBoundInputs, alpha: f64, c_big: f64) -> Result<AveragedConstants> {
    if !(alpha > 0.5 && alpha < 1.0) {
        return Err(Error::AlphaOutOfRange(alpha));
    }
    let TdBoundInputs { mu, beta, c0, c, d, .. } = inputs;
    if !(mu > 0.0 && c0 > 0.0 && c > 0.0) {
        return Err(Error::InvalidSpec("mu, c0 and c must be positive".into()));
    }
    let d = d as f64;
    let n0 = (c * mu * (1.0 - beta) / (2.0 * c0 * (1.0 + beta).powi(2))).powf(-1.0 / alpha);
    let ca = c.powf(alpha);
    let horizon = c0 * ca * (c + n0).powf(1.0 - alpha);
    let burn_in_growth = (1.0 + d * horizon) * ((1.0 + beta) * horizon).exp();
    let bracket = 4.0 * alpha / (mu * (1.0 - beta) * c0 * ca) + 2f64.powf(alpha) / alpha;
    let c_prime = (3f64.powf(alpha) + bracket * bracket).sqrt();
    let (c_dprime, _) = zeta_series(2.0 * alpha)?;
    let kappa = mu * ca * (1.0 - beta) * c0 / (2.0 * (1.0 - alpha));
    let c_tprime = exp_power_series(kappa, c, alpha, (c + n0).powf(1.0 - alpha))?;
    Ok(AveragedConstants {
        inputs,
        alpha,
        c_big,
        n0,
        c_prime,
        c_dprime,
        c_tprime,
        burn_in_growth,
    })
}

/// `sum_{k>=1} exp(-kappa ((k + c)^{1-alpha} - offset))`.
///
/// Terms are summed directly until the summand varies slowly over a unit step;
/// the remainder is the exact integral (an upper incomplete gamma function)
/// with the Euler-Maclaurin endpoint corrections.
fn exp_power_series(kappa: f64, c: f64, alpha: f64, offset: f64) -> Result<f64> {
    let q = 1.0 - alpha;
    let p = alpha / q;
    let summand = |k: f64| (-kappa * ((k + c).powf(q) - offset)).exp();
    let mut sum = 0.0;
    let mut k = 1u64;
    loop {
        let x = k as f64;
        let term = summand(x);
        if !term.is_finite() {
            return Err(Error::SolverFailure("C''' series overflows".into()));
        }
        // relative slope |f'(x)| / f(x)
        let slope = kappa * q * (x + c).powf(-alpha);
        if slope <= 1e-3 {
            // int_x^inf f = exp(kappa offset) / q * kappa^{-(p+1)} Gamma(p+1, kappa u)
            let u = (x + c).powf(q);
            let log_int = kappa * offset - (p + 1.0) * kappa.ln() + ln_gamma(p + 1.0) - q.ln();
            let integral = log_int.exp() * gamma_ur(p + 1.0, kappa * u);
            let tail = integral + term / 2.0 + slope * term / 12.0;
            if !tail.is_finite() {
                return Err(Error::SolverFailure("C''' series overflows".into()));
            }
            return Ok(sum + tail);
        }
        sum += term;
        if term < 1e-300 {
            return Ok(sum);
        }
        k += 1;
    }
}

/// Constants of the centered TD bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CtdConstants {
    pub c1: f64,
    pub c2: f64,
    /// `max(C1, rho^M)`
    pub decay_factor: f64,
    pub admissible: bool,
    pub gamma: f64,
    pub epoch_length: usize,
    pub radius: f64,
}

impl CtdConstants {
    /// Right-hand side of the geometrically ergodic epoch bound on
    /// `|Phi (anchor_m - theta*)|_Psi^2`, with mixing constant `c_mix`.
    pub fn epoch_bound(&self, m: u32, initial_error_sq: f64, c_mix: f64) -> f64 {
        let mf = self.epoch_length as f64;
        self.c1.powi(m as i32) * initial_error_sq
            + c_mix * mf * self.c2 * self.radius * (5.0 * self.gamma + 4.0)
                * self.decay_factor.powi(m as i32 - 1)
    }
}

/// `C1 = ((2 mu gamma M)^{-1} + gamma d^2 / 2) / ((1-beta) - d^2 gamma / 2)`,
/// `C2 = gamma / (M ((1-beta) - d^2 gamma/2))`.
pub fn theorem3_constants(
    mu: f64,
    beta: f64,
    gamma: f64,
    epoch_length: usize,
    d: usize,
    radius: f64,
    rho: f64,
) -> Result<CtdConstants> {
    let d2 = (d * d) as f64;
    let denom = (1.0 - beta) - d2 * gamma / 2.0;
    if !(denom > 0.0) {
        return Err(Error::DenominatorNonPositive(denom));
    }
    let m = epoch_length as f64;
    let c1 = (1.0 / (2.0 * mu * gamma * m) + gamma * d2 / 2.0) / denom;
    let c2 = gamma / (m * denom);
    Ok(CtdConstants {
        c1,
        c2,
        decay_factor: c1.max(rho.powi(epoch_length.min(i32::MAX as usize) as i32)),
        admissible: c1 < 1.0,
        gamma,
        epoch_length,
        radius,
    })
}

/// Smallest epoch length with `C1 <= target`, if the step size allows one.
pub fn min_epoch_length(mu: f64, beta: f64, gamma: f64, d: usize, target: f64) -> Option<usize> {
    let d2 = (d * d) as f64;
    let denom = (1.0 - beta) - d2 * gamma / 2.0;
    let room = target * denom - gamma * d2 / 2.0;
    if !(denom > 0.0) || !(room > 0.0) {
        return None;
    }
    Some((1.0 / (2.0 * mu * gamma * room)).ceil().max(1.0) as usize)
}

/// Which bound to tabulate.
#[derive(Debug, Clone, Copy)]
pub enum BoundConstants<'a> {
    Td(&'a TdConstants),
    Averaged(&'a AveragedConstants),
}

/// `(n, bound(n))` over a grid: `K1(n)/sqrt(n+c)` or `K1^IA(n)/(n+c)^{alpha/2}`.
pub fn bound_curve(constants: BoundConstants<'_>, n_grid: &[u64]) -> Vec<(u64, f64)> {
    n_grid
        .iter()
        .map(|&n| {
            let v = match constants {
                BoundConstants::Td(k) => k.expectation_bound(n as f64),
                BoundConstants::Averaged(k) => k.expectation_bound(n as f64),
            };
            (n, v)
        })
        .collect()
}
