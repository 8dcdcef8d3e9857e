//! Battery degradation models.
//!
//! Two mechanisms are modelled: cycling loss driven by charge throughput and
//! calendar loss while the pack idles at some state of charge. The planner
//! never uses these nonlinear models directly; it consumes the linear slopes
//! `kc` (charging) and `ks` (idle) produced by [`fit_degradation_coefficients`].

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Degradation-model constants.
///
/// Capacity losses are expressed in Ah. `kc` and `ks` are `None` until the
/// linear coefficients have been fitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatteryParams {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub k4: f64,
    #[serde(rename = "kA")]
    pub ka: f64,
    #[serde(rename = "kB")]
    pub kb: f64,
    /// Activation energy of the SOC-dependent calendar term (J/mol).
    #[serde(rename = "EA")]
    pub ea: f64,
    /// Activation energy of the SOC-independent calendar term (J/mol).
    #[serde(rename = "EB")]
    pub eb: f64,
    #[serde(rename = "R")]
    pub r: f64,
    /// Reference temperature (K). Planning always runs at this temperature.
    #[serde(rename = "Tref")]
    pub t_ref: f64,
    /// Nominal capacity (Ah).
    #[serde(rename = "Cnom")]
    pub c_nom: f64,
    pub alpha: f64,
    /// Charging-degradation slope, Ah per hour per unit C-rate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kc: Option<f64>,
    /// Idle-degradation slope, Ah per hour per unit SOC.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ks: Option<f64>,
    /// SOC consumed per unit distance.
    pub kv: f64,
}

/// Keys accepted in a battery parameter file.
pub const PARAM_KEYS: [&str; 15] = [
    "k1", "k2", "k3", "k4", "kA", "kB", "EA", "EB", "R", "Tref", "Cnom", "alpha", "kc", "ks", "kv",
];

impl Default for BatteryParams {
    /// LiFePO4-like magnitudes for a 20 Ah pack, distances in km.
    fn default() -> Self {
        BatteryParams {
            k1: 4.0e-5,
            k2: 1.5,
            k3: 1.0e-5,
            k4: 2.0,
            ka: 6.0e-5,
            kb: 1.0e-5,
            ea: 50_000.0,
            eb: 30_000.0,
            r: 8.314,
            t_ref: 298.15,
            c_nom: 20.0,
            alpha: 1.2,
            kc: None,
            ks: None,
            kv: 0.1,
        }
    }
}

impl BatteryParams {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        for (name, value) in [
            ("k1", self.k1),
            ("k2", self.k2),
            ("k3", self.k3),
            ("k4", self.k4),
            ("kA", self.ka),
            ("kB", self.kb),
            ("EA", self.ea),
            ("EB", self.eb),
            ("R", self.r),
            ("Tref", self.t_ref),
            ("Cnom", self.c_nom),
            ("alpha", self.alpha),
            ("kv", self.kv),
        ] {
            if !value.is_finite() {
                bad.push(format!("{name} must be finite"));
            }
        }
        if self.c_nom <= 0.0 {
            bad.push("Cnom must be > 0".into());
        }
        if self.r <= 0.0 {
            bad.push("R must be > 0".into());
        }
        if self.t_ref <= 0.0 {
            bad.push("Tref must be > 0".into());
        }
        if self.alpha < 0.0 {
            bad.push("alpha must be >= 0".into());
        }
        if self.kv <= 0.0 {
            bad.push("kv must be > 0".into());
        }
        if let Some(kc) = self.kc {
            if !(kc.is_finite() && kc >= 0.0) {
                bad.push("kc must be finite and >= 0".into());
            }
        }
        if let Some(ks) = self.ks {
            if !(ks.is_finite() && ks >= 0.0) {
                bad.push("ks must be finite and >= 0".into());
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Invariant(bad))
        }
    }

    /// Returns `(kc, ks)`, failing when the coefficients have not been fitted.
    pub fn fitted(&self) -> Result<(f64, f64)> {
        match (self.kc, self.ks) {
            (Some(kc), Some(ks)) => Ok((kc, ks)),
            _ => Err(Error::Config(
                "battery parameters lack fitted kc/ks; run the fit step first".into(),
            )),
        }
    }

    /// Parses a parameter file. Unknown keys are rejected; missing keys take
    /// their default value and are reported through the logger.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let serde_json::Value::Object(mut given) = value else {
            return Err(Error::Config("battery file must hold a JSON object".into()));
        };
        let unknown: Vec<String> = given
            .keys()
            .filter(|k| !PARAM_KEYS.contains(&k.as_str()))
            .map(|k| format!("unknown battery key `{k}`"))
            .collect();
        if !unknown.is_empty() {
            return Err(Error::Invariant(unknown));
        }
        let defaults = serde_json::to_value(BatteryParams::default())?;
        if let serde_json::Value::Object(defaults) = defaults {
            for (key, value) in defaults {
                if !given.contains_key(&key) {
                    log::info!("battery parameter `{key}` missing, using default {value}");
                    given.insert(key, value);
                }
            }
        }
        let params: BatteryParams = serde_json::from_value(serde_json::Value::Object(given))?;
        params.validate()?;
        Ok(params)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text).map_err(|e| match e {
            Error::Json(source) => Error::Parse {
                path: path.to_path_buf(),
                source,
            },
            other => other,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Stress factors of one charge cycle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CyclingStress {
    pub soc_dev: f64,
    pub soc_avg: f64,
    /// Capacity throughput of the cycle (Ah).
    pub q: f64,
}

impl CyclingStress {
    pub fn validate(&self) -> Result<()> {
        let unit = 0.0..=1.0;
        if !unit.contains(&self.soc_dev) {
            return Err(Error::Domain(format!(
                "soc_dev {} outside [0, 1]",
                self.soc_dev
            )));
        }
        if !unit.contains(&self.soc_avg) {
            return Err(Error::Domain(format!(
                "soc_avg {} outside [0, 1]",
                self.soc_avg
            )));
        }
        if !(self.q >= 0.0 && self.q.is_finite()) {
            return Err(Error::Domain(format!("throughput {} must be >= 0", self.q)));
        }
        Ok(())
    }
}

/// Capacity lost over one cycle:
/// `(k1·dev·exp(k2·avg) + k3·exp(k4·dev))·q`.
pub fn cycling_degradation(params: &BatteryParams, stress: &CyclingStress) -> Result<f64> {
    stress.validate()?;
    let per_ah = params.k1 * stress.soc_dev * (params.k2 * stress.soc_avg).exp()
        + params.k3 * (params.k4 * stress.soc_dev).exp();
    Ok(per_ah * stress.q)
}

fn arrhenius(activation: f64, params: &BatteryParams, temperature: f64) -> f64 {
    (-activation / params.r * (1.0 / temperature - 1.0 / params.t_ref)).exp()
}

/// Calendar-loss rate `k(T, soc)` in Ah per hour, affine in `soc`.
pub fn calendar_rate(params: &BatteryParams, temperature: f64, soc: f64) -> Result<f64> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::Domain(format!(
            "temperature {temperature} K must be positive"
        )));
    }
    if !(0.0..=1.0).contains(&soc) {
        return Err(Error::Domain(format!("soc {soc} outside [0, 1]")));
    }
    Ok(params.ka * arrhenius(params.ea, params, temperature) * soc
        + params.kb * arrhenius(params.eb, params, temperature))
}

/// Integrates `dQ/dt = k(T, soc)·(1 + Q/Cnom)^(−alpha)` from `q_loss0` over
/// `duration` hours using the exact solution of the separable equation.
pub fn integrate_calendar_loss(
    params: &BatteryParams,
    temperature: f64,
    soc: f64,
    q_loss0: f64,
    duration: f64,
) -> Result<f64> {
    if !(duration >= 0.0) {
        return Err(Error::Domain(format!("duration {duration} must be >= 0")));
    }
    if !(q_loss0 >= 0.0) {
        return Err(Error::Domain(format!(
            "initial loss {q_loss0} must be >= 0"
        )));
    }
    let k = calendar_rate(params, temperature, soc)?;
    if duration == 0.0 {
        return Ok(q_loss0);
    }
    let cn = params.c_nom;
    let e = params.alpha + 1.0;
    let lifted = (1.0 + q_loss0 / cn).powf(e) + k * e * duration / cn;
    Ok(cn * (lifted.powf(1.0 / e) - 1.0))
}

/// Stress of a charge event at C-rate `c` lasting `duration` hours that ends
/// at `target_soc`.
///
/// The event covers an SOC swing of `c·duration`, centred half a swing below
/// the target, with throughput `Cnom·c·duration`.
pub fn charge_event_stress(
    params: &BatteryParams,
    c: f64,
    duration: f64,
    target_soc: f64,
) -> Result<CyclingStress> {
    if !(c >= 0.0 && duration >= 0.0) {
        return Err(Error::Domain(format!(
            "charge event needs c >= 0 and duration >= 0 (got {c}, {duration})"
        )));
    }
    let swing = c * duration;
    let stress = CyclingStress {
        soc_dev: swing,
        soc_avg: target_soc - swing / 2.0,
        q: params.c_nom * swing,
    };
    stress.validate()?;
    Ok(stress)
}

/// SOC at the end of the charge events used when fitting `kc`.
pub const FIT_TARGET_SOC: f64 = 0.8;

/// Fits the linear slopes used by the planner.
///
/// * `kc` is the through-origin least-squares slope of per-hour charging
///   degradation against C-rate, each sample being a charge event of
///   `horizon` hours (see [`charge_event_stress`]).
/// * `ks` is the through-origin slope of the calendar rate above its
///   `soc = 0` intercept, at the reference temperature.
pub fn fit_degradation_coefficients(
    params: &BatteryParams,
    c_grid: &[f64],
    soc_grid: &[f64],
    horizon: f64,
) -> Result<(f64, f64)> {
    if c_grid.is_empty() || soc_grid.is_empty() {
        return Err(Error::Fit("fit grids must be nonempty".into()));
    }
    if !(horizon > 0.0) {
        return Err(Error::Fit(format!("horizon {horizon} must be positive")));
    }
    let mut cc = 0.0;
    let mut cy = 0.0;
    for &c in c_grid {
        let stress = charge_event_stress(params, c, horizon, FIT_TARGET_SOC)?;
        let per_hour = cycling_degradation(params, &stress)? / horizon;
        cc += c * c;
        cy += c * per_hour;
    }
    if cc == 0.0 {
        return Err(Error::Fit("C-rate grid is all zero".into()));
    }

    let base = calendar_rate(params, params.t_ref, 0.0)?;
    let mut ss = 0.0;
    let mut sy = 0.0;
    for &s in soc_grid {
        let excess = calendar_rate(params, params.t_ref, s)? - base;
        ss += s * s;
        sy += s * excess;
    }
    if ss == 0.0 {
        return Err(Error::Fit("SOC grid is all zero".into()));
    }
    Ok((cy / cc, sy / ss))
}

/// Default grids used by the `fit` command.
pub const DEFAULT_C_GRID: [f64; 4] = [0.5, 1.0, 1.5, 2.0];
pub const DEFAULT_SOC_GRID: [f64; 5] = [0.2, 0.4, 0.6, 0.8, 1.0];
pub const DEFAULT_FIT_HORIZON: f64 = 0.25;

/// Returns a copy of `params` with `kc` and `ks` filled from the default grids.
pub fn fit_default(params: &BatteryParams) -> Result<BatteryParams> {
    let (kc, ks) = fit_degradation_coefficients(
        params,
        &DEFAULT_C_GRID,
        &DEFAULT_SOC_GRID,
        DEFAULT_FIT_HORIZON,
    )?;
    Ok(BatteryParams {
        kc: Some(kc),
        ks: Some(ks),
        ..params.clone()
    })
}
