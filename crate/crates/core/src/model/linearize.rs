use crate::error::{Error, Result};

/// `y = slope * x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineForm {
    pub slope: f64,
    pub intercept: f64,
}

impl AffineForm {
    pub fn eval(&self, x: f64) -> f64 {
        self.slope * x + self.intercept
    }

    /// The point where the form crosses zero.
    pub fn root(&self) -> f64 {
        -self.intercept / self.slope
    }
}

/// First-order expansion of the travel time `d / v` around `v_hat`:
/// `t = d (2 / v_hat - v / v_hat^2)`.
pub fn linearize_travel_time(d: f64, v_hat: f64) -> Result<AffineForm> {
    if !(v_hat > 0.0) {
        return Err(Error::Domain(format!(
            "nominal speed must be positive (got {v_hat})"
        )));
    }
    if !(d > 0.0) {
        return Err(Error::Domain(format!(
            "distance must be positive (got {d})"
        )));
    }
    Ok(AffineForm {
        slope: -d / (v_hat * v_hat),
        intercept: 2.0 * d / v_hat,
    })
}

/// First-order expansion of the charge time `kv d / c` around `c_hat`.
pub fn linearize_charge_time(d: f64, c_hat: f64, kv: f64) -> Result<AffineForm> {
    if !(c_hat > 0.0) {
        return Err(Error::Domain(format!(
            "nominal C-rate must be positive (got {c_hat})"
        )));
    }
    let soc = kv * d;
    Ok(AffineForm {
        slope: -soc / (c_hat * c_hat),
        intercept: 2.0 * soc / c_hat,
    })
}
