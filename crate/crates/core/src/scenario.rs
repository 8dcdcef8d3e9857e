//! Task-set data model, baseline decision and uncertainty sampling.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::robust::RobustConfig;

/// SOC target used by the "as fast as possible" baseline policy.
pub const BASELINE_TARGET_SOC: f64 = 0.8;

/// A closed interval `[lo, hi]`, serialized as a two-element array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Bounds {
    pub lo: f64,
    pub hi: f64,
}

impl Bounds {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Bounds { lo, hi }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.lo, self.hi)
    }
}

impl From<[f64; 2]> for Bounds {
    fn from([lo, hi]: [f64; 2]) -> Self {
        Bounds { lo, hi }
    }
}

impl From<Bounds> for [f64; 2] {
    fn from(b: Bounds) -> Self {
        [b.lo, b.hi]
    }
}

/// Planning instance: N task groups plus bounds, weights and the optional
/// uncertainty description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScenarioFile")]
pub struct Scenario {
    pub n: usize,
    /// Interval between the start of group `i` and group `i + 1` (h).
    pub xi: Vec<f64>,
    /// Estimated travel distance of each group (km).
    pub d: Vec<f64>,
    /// SOC floor that must survive every task group.
    pub s_lower: f64,
    pub v_bounds: Bounds,
    pub c_bounds: Bounds,
    pub t_bounds: Bounds,
    pub tc_bounds: Bounds,
    pub tw_bounds: Bounds,
    pub s_bounds: Bounds,
    pub lambda: f64,
    pub beta: Vec<f64>,
    pub v_hat: f64,
    pub c_hat: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub uncertainty: Option<UncertaintyModel>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub robust: Option<RobustConfig>,
}

/// On-disk form; optional fields are filled by [`Scenario::try_from`].
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    n: usize,
    xi: Vec<f64>,
    d: Vec<f64>,
    s_lower: f64,
    v_bounds: Bounds,
    c_bounds: Bounds,
    t_bounds: Bounds,
    tc_bounds: Bounds,
    #[serde(default)]
    tw_bounds: Option<Bounds>,
    s_bounds: Bounds,
    #[serde(default)]
    lambda: Option<f64>,
    #[serde(default)]
    beta: Option<Vec<f64>>,
    #[serde(default)]
    v_hat: Option<f64>,
    #[serde(default)]
    c_hat: Option<f64>,
    #[serde(default)]
    uncertainty: Option<UncertaintyFile>,
    #[serde(default)]
    robust: Option<RobustConfig>,
}

impl TryFrom<ScenarioFile> for Scenario {
    type Error = Error;

    fn try_from(f: ScenarioFile) -> Result<Self> {
        let horizon: f64 = f.xi.iter().sum();
        let uncertainty = match f.uncertainty {
            Some(u) => Some(u.resolve(&f.xi, &f.d)?),
            None => None,
        };
        let scenario = Scenario {
            n: f.n,
            tw_bounds: f.tw_bounds.unwrap_or(Bounds::new(0.0, horizon)),
            lambda: f.lambda.unwrap_or(1.0),
            beta: f.beta.unwrap_or_else(|| vec![0.0; 2 * f.n]),
            v_hat: f.v_hat.unwrap_or(f.v_bounds.mid()),
            c_hat: f.c_hat.unwrap_or(f.c_bounds.mid()),
            xi: f.xi,
            d: f.d,
            s_lower: f.s_lower,
            v_bounds: f.v_bounds,
            c_bounds: f.c_bounds,
            t_bounds: f.t_bounds,
            tc_bounds: f.tc_bounds,
            s_bounds: f.s_bounds,
            uncertainty,
            robust: f.robust,
        };
        scenario.validate()?;
        Ok(scenario)
    }
}

impl Scenario {
    /// Checks every invariant and reports all failures at once.
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.n == 0 {
            bad.push("n must be >= 1".to_string());
        }
        if self.xi.len() != self.n {
            bad.push(format!(
                "xi has {} entries, expected n = {}",
                self.xi.len(),
                self.n
            ));
        }
        if self.d.len() != self.n {
            bad.push(format!(
                "d has {} entries, expected n = {}",
                self.d.len(),
                self.n
            ));
        }
        for (i, &x) in self.xi.iter().enumerate() {
            if !(x > 0.0 && x.is_finite()) {
                bad.push(format!("xi[{i}] must be > 0 (got {x})"));
            }
        }
        for (i, &x) in self.d.iter().enumerate() {
            if !(x > 0.0 && x.is_finite()) {
                bad.push(format!("d[{i}] must be > 0 (got {x})"));
            }
        }
        for (name, b) in [
            ("v_bounds", self.v_bounds),
            ("c_bounds", self.c_bounds),
            ("t_bounds", self.t_bounds),
            ("tc_bounds", self.tc_bounds),
            ("tw_bounds", self.tw_bounds),
            ("s_bounds", self.s_bounds),
        ] {
            if !(b.lo < b.hi) || !b.lo.is_finite() || !b.hi.is_finite() {
                bad.push(format!(
                    "{name}: lower bound must be < upper bound (got [{}, {}])",
                    b.lo, b.hi
                ));
            }
        }
        if self.v_bounds.lo <= 0.0 {
            bad.push("v_bounds: speeds must be positive".into());
        }
        if self.c_bounds.lo <= 0.0 {
            bad.push("c_bounds: C-rates must be positive".into());
        }
        if self.tw_bounds.lo < 0.0 {
            bad.push("tw_bounds: idle time cannot be negative".into());
        }
        if !(0.0 <= self.s_lower && self.s_lower < self.s_bounds.lo && self.s_bounds.hi <= 1.0) {
            bad.push(format!(
                "s_lower/s_bounds: need 0 <= s_lower < S^L < S^U <= 1 (got {}, [{}, {}])",
                self.s_lower, self.s_bounds.lo, self.s_bounds.hi
            ));
        }
        if !(self.lambda >= 0.0) {
            bad.push(format!("lambda must be >= 0 (got {})", self.lambda));
        }
        if self.beta.len() != 2 * self.n {
            bad.push(format!(
                "beta has {} entries, expected 2n = {}",
                self.beta.len(),
                2 * self.n
            ));
        }
        if !self.v_bounds.contains(self.v_hat) {
            bad.push(format!("v_hat {} outside v_bounds", self.v_hat));
        }
        if !self.c_bounds.contains(self.c_hat) {
            bad.push(format!("c_hat {} outside c_bounds", self.c_hat));
        }
        if let Some(u) = &self.uncertainty {
            if let Err(Error::Invariant(mut more)) = u.validate(2 * self.n) {
                bad.append(&mut more);
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Invariant(bad))
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: ScenarioFile = serde_json::from_str(text)?;
        Scenario::try_from(file)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Total planning horizon `Σ ξ`.
    pub fn horizon(&self) -> f64 {
        self.xi.iter().sum()
    }

    /// Intervals and distances after applying `delta`: component `i`
    /// perturbs `xi[i]`, component `n + i` perturbs `d[i]`.
    pub fn perturbed(&self, delta: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.n;
        let xi = (0..n)
            .map(|i| self.xi[i] + delta.get(i).copied().unwrap_or(0.0))
            .collect();
        let d = (0..n)
            .map(|i| self.d[i] + delta.get(n + i).copied().unwrap_or(0.0))
            .collect();
        (xi, d)
    }

    pub fn uncertainty(&self) -> Result<&UncertaintyModel> {
        self.uncertainty
            .as_ref()
            .ok_or_else(|| Error::Config("scenario has no uncertainty model".into()))
    }
}

/// Reads and validates a scenario file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Scenario::from_json_str(&text).map_err(|e| match e {
        Error::Json(source) => Error::Parse {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    })
}

/// Affine recourse gains. Each matrix has one row per task and one column
/// per uncertainty component (2N).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recourse {
    /// Target-SOC adjustment.
    pub ws: Vec<Vec<f64>>,
    /// Execution-time adjustment.
    pub wt: Vec<Vec<f64>>,
    /// Charging-time adjustment.
    pub wtc: Vec<Vec<f64>>,
    /// Waiting-time adjustment.
    pub wdt: Vec<Vec<f64>>,
    /// Idle-time adjustment.
    pub wtw: Vec<Vec<f64>>,
}

impl Recourse {
    pub fn zeros(n: usize) -> Self {
        let z = vec![vec![0.0; 2 * n]; n];
        Recourse {
            ws: z.clone(),
            wt: z.clone(),
            wtc: z.clone(),
            wdt: z.clone(),
            wtw: z,
        }
    }

    pub fn is_zero(&self) -> bool {
        [&self.ws, &self.wt, &self.wtc, &self.wdt, &self.wtw]
            .iter()
            .all(|m| m.iter().flatten().all(|&x| x == 0.0))
    }
}

/// First-stage control inputs and optional recourse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub s_bar: f64,
    pub v: f64,
    pub c: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recourse: Option<Recourse>,
}

impl Decision {
    pub fn check_boxes(&self, scenario: &Scenario) -> Result<()> {
        let mut bad = Vec::new();
        if !scenario.s_bounds.contains(self.s_bar) {
            bad.push(format!("s_bar {} outside s_bounds", self.s_bar));
        }
        if !scenario.v_bounds.contains(self.v) {
            bad.push(format!("v {} outside v_bounds", self.v));
        }
        if !scenario.c_bounds.contains(self.c) {
            bad.push(format!("c {} outside c_bounds", self.c));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Invariant(bad))
        }
    }
}

/// Fastest-possible policy: SOC target 0.8, top speed, top C-rate.
pub fn baseline_decision(scenario: &Scenario) -> Result<Decision> {
    if !scenario.s_bounds.contains(BASELINE_TARGET_SOC) {
        return Err(Error::Config(format!(
            "baseline target SOC {BASELINE_TARGET_SOC} outside s_bounds [{}, {}]",
            scenario.s_bounds.lo, scenario.s_bounds.hi
        )));
    }
    Ok(Decision {
        s_bar: BASELINE_TARGET_SOC,
        v: scenario.v_bounds.hi,
        c: scenario.c_bounds.hi,
        recourse: None,
    })
}

/// Marginal distribution of one uncertainty component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Component {
    Point { value: f64 },
    Uniform { lo: f64, hi: f64 },
    TruncatedNormal { mean: f64, sd: f64, clip: Bounds },
}

impl Component {
    /// Support interval of the marginal.
    pub fn support(&self) -> Bounds {
        match *self {
            Component::Point { value } => Bounds::new(value, value),
            Component::Uniform { lo, hi } => Bounds::new(lo, hi),
            Component::TruncatedNormal { clip, .. } => clip,
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            Component::Point { value } => value,
            Component::Uniform { lo, hi } => {
                if hi > lo {
                    rng.gen_range(lo..=hi)
                } else {
                    lo
                }
            }
            Component::TruncatedNormal { mean, sd, clip } => {
                if sd == 0.0 {
                    return clip.clamp(mean);
                }
                let normal = Normal::new(mean, sd).expect("validated sd");
                for _ in 0..10_000 {
                    let x = normal.sample(rng);
                    if clip.contains(x) {
                        return x;
                    }
                }
                clip.clamp(mean)
            }
        }
    }
}

/// Support polytope `{δ : U δ <= t}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polytope {
    pub u: Vec<Vec<f64>>,
    pub t: Vec<f64>,
}

impl Polytope {
    /// The box `lo <= δ <= hi` written as `[I; -I] δ <= [hi; -lo]`.
    pub fn from_box(bounds: &[Bounds]) -> Self {
        let m = bounds.len();
        let mut u = Vec::with_capacity(2 * m);
        let mut t = Vec::with_capacity(2 * m);
        for (j, b) in bounds.iter().enumerate() {
            let mut row = vec![0.0; m];
            row[j] = 1.0;
            u.push(row);
            t.push(b.hi);
        }
        for (j, b) in bounds.iter().enumerate() {
            let mut row = vec![0.0; m];
            row[j] = -1.0;
            u.push(row);
            t.push(-b.lo);
        }
        Polytope { u, t }
    }

    pub fn dim(&self) -> usize {
        self.u.first().map_or(0, Vec::len)
    }

    pub fn contains(&self, delta: &[f64], slack: f64) -> bool {
        self.u.iter().zip(&self.t).all(|(row, &t)| {
            let lhs: f64 = row.iter().zip(delta).map(|(a, x)| a * x).sum();
            lhs <= t + slack
        })
    }

    /// If every row is a signed unit vector, returns the implied box.
    pub fn as_box(&self) -> Option<Vec<Bounds>> {
        let m = self.dim();
        let mut lo = vec![f64::NEG_INFINITY; m];
        let mut hi = vec![f64::INFINITY; m];
        for (row, &t) in self.u.iter().zip(&self.t) {
            let nz: Vec<(usize, f64)> = row
                .iter()
                .copied()
                .enumerate()
                .filter(|&(_, a)| a != 0.0)
                .collect();
            match nz.as_slice() {
                [(j, a)] if *a > 0.0 => hi[*j] = hi[*j].min(t / a),
                [(j, a)] if *a < 0.0 => lo[*j] = lo[*j].max(t / a),
                [] if t >= 0.0 => {}
                _ => return None,
            }
        }
        if lo.iter().chain(&hi).all(|x| x.is_finite()) {
            Some(
                lo.into_iter()
                    .zip(hi)
                    .map(|(l, h)| Bounds::new(l, h))
                    .collect(),
            )
        } else {
            None
        }
    }
}

/// Distribution and support of the 2N-dimensional uncertainty `δ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyModel {
    pub components: Vec<Component>,
    pub polytope: Polytope,
    pub k_samples: usize,
    pub epsilon: f64,
    pub seed: u64,
}

/// On-disk uncertainty block. Without explicit components, intervals and
/// distances get independent uniform noise of relative half-width
/// `xi_spread` / `d_spread`; without an explicit polytope, the box spanned
/// by the component supports is used.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct UncertaintyFile {
    #[serde(default)]
    components: Option<Vec<Component>>,
    #[serde(default)]
    xi_spread: Option<f64>,
    #[serde(default)]
    d_spread: Option<f64>,
    #[serde(default)]
    polytope: Option<Polytope>,
    #[serde(default = "default_k_samples")]
    k_samples: usize,
    #[serde(default = "default_epsilon")]
    epsilon: f64,
    #[serde(default)]
    seed: u64,
}

fn default_k_samples() -> usize {
    100
}

fn default_epsilon() -> f64 {
    0.02
}

impl UncertaintyFile {
    fn resolve(self, xi: &[f64], d: &[f64]) -> Result<UncertaintyModel> {
        let components = match self.components {
            Some(c) => c,
            None => {
                let xs = self.xi_spread.unwrap_or(0.1);
                let ds = self.d_spread.unwrap_or(0.1);
                xi.iter()
                    .map(|&x| (x, xs))
                    .chain(d.iter().map(|&x| (x, ds)))
                    .map(|(x, s)| {
                        if s == 0.0 {
                            Component::Point { value: 0.0 }
                        } else {
                            Component::Uniform {
                                lo: -s * x,
                                hi: s * x,
                            }
                        }
                    })
                    .collect()
            }
        };
        let polytope = match self.polytope {
            Some(p) => p,
            None => Polytope::from_box(
                &components
                    .iter()
                    .map(Component::support)
                    .collect::<Vec<_>>(),
            ),
        };
        Ok(UncertaintyModel {
            components,
            polytope,
            k_samples: self.k_samples,
            epsilon: self.epsilon,
            seed: self.seed,
        })
    }
}

impl UncertaintyModel {
    /// Independent uniform noise of the given relative half-widths with the
    /// matching box support.
    pub fn relative_box(scenario: &Scenario, xi_spread: f64, d_spread: f64) -> Self {
        UncertaintyFile {
            components: None,
            xi_spread: Some(xi_spread),
            d_spread: Some(d_spread),
            polytope: None,
            k_samples: default_k_samples(),
            epsilon: default_epsilon(),
            seed: 0,
        }
        .resolve(&scenario.xi, &scenario.d)
        .expect("relative box always resolves")
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        let mut bad = Vec::new();
        if self.components.len() != dim {
            bad.push(format!(
                "uncertainty has {} components, expected 2n = {dim}",
                self.components.len()
            ));
        }
        for (j, c) in self.components.iter().enumerate() {
            match *c {
                Component::Uniform { lo, hi } if !(lo <= hi) => {
                    bad.push(format!("uncertainty.components[{j}]: lo > hi"))
                }
                Component::TruncatedNormal { sd, clip, .. }
                    if !(sd >= 0.0) || clip.lo > clip.hi =>
                {
                    bad.push(format!("uncertainty.components[{j}]: bad truncated normal"))
                }
                _ => {}
            }
        }
        if self.polytope.u.len() != self.polytope.t.len() {
            bad.push("uncertainty.polytope: u and t lengths differ".into());
        }
        if self.polytope.u.iter().any(|row| row.len() != dim) {
            bad.push(format!(
                "uncertainty.polytope: rows of u must have {dim} columns"
            ));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            bad.push(format!(
                "uncertainty.epsilon must lie in (0, 1) (got {})",
                self.epsilon
            ));
        }
        if self.k_samples < 1 {
            bad.push("uncertainty.k_samples must be >= 1".into());
        }
        if bad.is_empty() {
            // Support containment, checked on draws from a fixed stream.
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, "support-check"));
            for _ in 0..2000 {
                let delta: Vec<f64> = self.components.iter().map(|c| c.sample(&mut rng)).collect();
                if !self.polytope.contains(&delta, 1e-9) {
                    bad.push(
                        "uncertainty: distribution support is not contained in the polytope".into(),
                    );
                    break;
                }
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Invariant(bad))
        }
    }

    /// Same distribution scaled by `factor` (support and polytope alike).
    pub fn scaled(&self, factor: f64) -> Self {
        let components = self
            .components
            .iter()
            .map(|c| match *c {
                Component::Point { value } => Component::Point {
                    value: value * factor,
                },
                Component::Uniform { lo, hi } => Component::Uniform {
                    lo: lo * factor,
                    hi: hi * factor,
                },
                Component::TruncatedNormal { mean, sd, clip } => Component::TruncatedNormal {
                    mean: mean * factor,
                    sd: sd * factor,
                    clip: Bounds::new(clip.lo * factor, clip.hi * factor),
                },
            })
            .collect();
        UncertaintyModel {
            components,
            polytope: Polytope {
                u: self.polytope.u.clone(),
                t: self.polytope.t.iter().map(|t| t * factor).collect(),
            },
            ..self.clone()
        }
    }
}

/// Maximum number of draws before a low acceptance rate is reported.
const REJECTION_WINDOW: usize = 100_000;

/// Draws `count` vectors from `model`, rejecting any outside the polytope.
/// The stream is fully determined by `seed`.
pub fn sample_uncertainty(
    model: &UncertaintyModel,
    count: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if count == 0 {
        return Err(Error::Config("sample count must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    let mut draws = 0usize;
    while out.len() < count {
        let delta: Vec<f64> = model
            .components
            .iter()
            .map(|c| c.sample(&mut rng))
            .collect();
        draws += 1;
        if model.polytope.contains(&delta, 1e-9) {
            out.push(delta);
        }
        if draws >= REJECTION_WINDOW && out.len() * 100 < draws {
            return Err(Error::Config(format!(
                "uncertainty distribution inconsistent with its polytope: accepted {} of {draws} draws",
                out.len()
            )));
        }
    }
    Ok(out)
}

/// Derives an independent stream seed from a root seed and a fixed label.
pub fn derive_seed(root: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}
