use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Step-size sequence `gamma_n`, indexed from `n = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StepSchedule {
    /// `gamma_n = c0 c / (c + n)`
    InverseLinear { c0: f64, c: f64 },
    /// `gamma_n = c0 (c / (c + n))^alpha`
    InversePower { c0: f64, c: f64, alpha: f64 },
    /// `gamma_n = gamma`
    Constant { gamma: f64 },
}

impl StepSchedule {
    pub fn inverse_linear(c0: f64, c: f64) -> Result<Self> {
        let s = StepSchedule::InverseLinear { c0, c };
        s.validate()?;
        Ok(s)
    }

    pub fn inverse_power(c0: f64, c: f64, alpha: f64) -> Result<Self> {
        let s = StepSchedule::InversePower { c0, c, alpha };
        s.validate()?;
        Ok(s)
    }

    pub fn constant(gamma: f64) -> Result<Self> {
        let s = StepSchedule::Constant { gamma };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidSpec(format!("step schedule: {name} = {v} must be positive")))
            }
        };
        match *self {
            StepSchedule::InverseLinear { c0, c } => {
                positive("c0", c0)?;
                positive("c", c)
            }
            StepSchedule::InversePower { c0, c, alpha } => {
                positive("c0", c0)?;
                positive("c", c)?;
                if alpha > 0.5 && alpha < 1.0 {
                    Ok(())
                } else {
                    Err(Error::AlphaOutOfRange(alpha))
                }
            }
            StepSchedule::Constant { gamma } => positive("gamma", gamma),
        }
    }

    #[inline]
    pub fn gamma(&self, n: u64) -> f64 {
        let n = n as f64;
        match *self {
            StepSchedule::InverseLinear { c0, c } => c0 * c / (c + n),
            StepSchedule::InversePower { c0, c, alpha } => c0 * (c / (c + n)).powf(alpha),
            StepSchedule::Constant { gamma } => gamma,
        }
    }
}
