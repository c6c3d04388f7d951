//! Versioned scenario documents: every numeric knob and seed of a run.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::array::{Decay, PhaseRule};
use crate::poly::BasisSpec;
use crate::postweight::{Ratio, Scheme};
use crate::pwopt::ConstraintMode;
use crate::signal::{Constellation, SignalConfig};
use crate::{Error, Result};

pub const SCENARIO_MAJOR: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalSection {
    pub n_subcarriers: usize,
    pub oversampling: usize,
    pub n_symbols: usize,
    #[serde(default = "default_constellation")]
    pub constellation: Constellation,
    /// Half-open range of active subcarrier indices; all when absent.
    #[serde(default)]
    pub active: Option<(usize, usize)>,
    /// RMS amplitude of every subarray's message signal.
    pub drive_rms: f64,
}

fn default_constellation() -> Constellation {
    Constellation::Qpsk
}

impl SignalSection {
    pub fn config(&self, seed: u64) -> SignalConfig {
        let mut cfg = SignalConfig::dense(self.n_subcarriers, self.oversampling, self.n_symbols, seed);
        cfg.constellation = self.constellation;
        if let Some((a, b)) = self.active {
            cfg.active_mask = (0..self.n_subcarriers).map(|j| j >= a && j < b).collect();
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArraySection {
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "S")]
    pub s: usize,
    #[serde(default = "half")]
    pub spacing: f64,
    /// Coupling between adjacent elements in dB; `null` disables crosstalk.
    pub adjacent_db: Option<f64>,
    #[serde(default = "default_decay")]
    pub decay: Decay,
    #[serde(default = "default_phase")]
    pub phase: PhaseRule,
    /// Relative spread of the synthetic PA coefficients.
    #[serde(default = "default_spread")]
    pub pa_spread: f64,
    /// Fit the PA models by least squares instead of reading them off the
    /// simulator.
    #[serde(default = "yes")]
    pub identify_pas: bool,
}

fn half() -> f64 {
    0.5
}
fn default_decay() -> Decay {
    Decay::InverseSquare
}
fn default_phase() -> PhaseRule {
    PhaseRule::Alternating
}
fn default_spread() -> f64 {
    0.05
}
fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpdSection {
    pub spec: BasisSpec,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default)]
    pub noise_rms: f64,
}

fn default_tol() -> f64 {
    1e-6
}
fn default_max_iter() -> usize {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutSpec {
    pub name: String,
    pub scheme: Scheme,
    #[serde(default = "one")]
    pub r: Ratio,
    #[serde(default)]
    pub nu: u32,
}

fn one() -> Ratio {
    Ratio::ONE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizeSection {
    #[serde(default)]
    pub constraint: ConstraintMode,
    #[serde(default)]
    pub ridge: f64,
    #[serde(default = "yes")]
    pub auto_ridge: bool,
    /// Angles the objective averages over; the sweep range when absent.
    #[serde(default)]
    pub range: Option<(f64, f64)>,
}

impl Default for OptimizeSection {
    fn default() -> Self {
        Self {
            constraint: ConstraintMode::TimeAveraged,
            ridge: 0.0,
            auto_ridge: true,
            range: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcprSection {
    pub channel_bw: f64,
    #[serde(default)]
    pub guard: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub signal: u64,
    pub pa_bank: u64,
    pub identification: u64,
    #[serde(default)]
    pub noise: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub version: String,
    #[serde(default)]
    pub name: String,
    pub signal: SignalSection,
    pub array: ArraySection,
    pub dpd: DpdSection,
    pub layouts: Vec<LayoutSpec>,
    /// Subarray whose post-weighting is optimized and swept.
    #[serde(default)]
    pub subarray: usize,
    pub phi0: f64,
    pub sweep_range: (f64, f64),
    pub sweep_points: usize,
    #[serde(default)]
    pub optimize: OptimizeSection,
    pub acpr: AcprSection,
    pub seeds: Seeds,
}

/// Line of the first occurrence of `"key"` in the document, if any.
fn line_of(text: &str, key: &str) -> Option<usize> {
    let needle = format!("\"{key}\"");
    text.lines().position(|l| l.contains(&needle)).map(|i| i + 1)
}

fn invalid(text: &str, field: &str, msg: String) -> Error {
    let leaf = field.rsplit('.').next().unwrap_or(field);
    match line_of(text, leaf) {
        Some(l) => Error::Config(format!("line {l}: field '{field}': {msg}")),
        None => Error::Config(format!("field '{field}': {msg}")),
    }
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Parse(format!("line {}: {e}", e.line())))?;
        let version = raw
            .get("version")
            .and_then(|v| v.as_str())
            .ok_or_else(|| invalid(text, "version", "missing or not a string".into()))?;
        let major: u32 = version
            .split('.')
            .next()
            .and_then(|m| m.parse().ok())
            .ok_or_else(|| invalid(text, "version", format!("cannot parse '{version}'")))?;
        if major != SCENARIO_MAJOR {
            return Err(invalid(
                text,
                "version",
                format!("major version {major} is not supported (expected {SCENARIO_MAJOR})"),
            ));
        }
        let de = &mut serde_json::Deserializer::from_str(text);
        let sc: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
            let line = e.inner().line();
            Error::Parse(format!("line {line}: field '{}': {}", e.path(), e.inner()))
        })?;
        sc.validate_with(text)?;
        Ok(sc)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_with("")
    }

    fn validate_with(&self, text: &str) -> Result<()> {
        let bad = |field: &str, msg: String| Err(invalid(text, field, msg));
        let sig = &self.signal;
        if sig.n_subcarriers == 0 || sig.n_symbols == 0 {
            return bad("signal.n_subcarriers", "n_subcarriers and n_symbols must be positive".into());
        }
        if sig.oversampling < 4 {
            return bad("signal.oversampling", format!("must be at least 4, got {}", sig.oversampling));
        }
        if let Some((a, b)) = sig.active {
            if a >= b || b > sig.n_subcarriers {
                return bad("signal.active", format!("[{a}, {b}) is not a non-empty subrange of the subcarriers"));
            }
        }
        if !(sig.drive_rms.is_finite() && sig.drive_rms > 0.0) {
            return bad("signal.drive_rms", format!("must be positive, got {}", sig.drive_rms));
        }
        let arr = &self.array;
        if arr.k == 0 || arr.s == 0 {
            return bad("array.K", "K and S must be positive".into());
        }
        if !(arr.spacing.is_finite() && arr.spacing > 0.0) {
            return bad("array.spacing", format!("must be positive, got {}", arr.spacing));
        }
        if let Some(db) = arr.adjacent_db {
            if !(db.is_finite() && db < 0.0) {
                return bad("array.adjacent_db", format!("must be negative, got {db}"));
            }
        }
        if !(arr.pa_spread >= 0.0 && arr.pa_spread < 1.0) {
            return bad("array.pa_spread", format!("must be in [0, 1), got {}", arr.pa_spread));
        }
        if !(self.dpd.tol > 0.0) {
            return bad("dpd.tol", format!("must be positive, got {}", self.dpd.tol));
        }
        if !(self.dpd.noise_rms >= 0.0) {
            return bad("dpd.noise_rms", "must be non-negative".into());
        }
        if self.dpd.spec.q() == 0 {
            return bad("dpd.spec", "needs at least one nonlinear term".into());
        }
        let mut names = std::collections::HashSet::new();
        for l in &self.layouts {
            if l.name.is_empty() || !l.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                return bad("layouts.name", format!("'{}' must be a non-empty identifier", l.name));
            }
            if matches!(l.name.as_str(), "dnr" | "dpd") {
                return bad("layouts.name", format!("'{}' is reserved", l.name));
            }
            if !names.insert(l.name.clone()) {
                return bad("layouts.name", format!("'{}' appears twice", l.name));
            }
        }
        if self.subarray >= arr.k {
            return bad("subarray", format!("{} is out of range for K={}", self.subarray, arr.k));
        }
        let (lo, hi) = self.sweep_range;
        let lim = std::f64::consts::FRAC_PI_2 + 1e-12;
        if !(lo <= hi && lo >= -lim && hi <= lim) {
            return bad("sweep_range", format!("[{lo}, {hi}] must be ordered and inside [-pi/2, pi/2]"));
        }
        if self.sweep_points < 2 {
            return bad("sweep_points", "need at least two points".into());
        }
        if !(self.phi0.abs() <= lim) {
            return bad("phi0", format!("{} is outside [-pi/2, pi/2]", self.phi0));
        }
        if let Some((a, b)) = self.optimize.range {
            if !(a <= b && a >= lo - 1e-12 && b <= hi + 1e-12) {
                return bad("optimize.range", "must lie inside sweep_range".into());
            }
        }
        if !(self.optimize.ridge >= 0.0) {
            return bad("optimize.ridge", "must be non-negative".into());
        }
        let a = self.acpr;
        if !(a.channel_bw > 0.0 && a.guard >= 0.0 && 1.5 * a.channel_bw + a.guard <= 0.5) {
            return bad(
                "acpr.channel_bw",
                format!("main and adjacent channels (bw {}, guard {}) must fit below 0.5", a.channel_bw, a.guard),
            );
        }
        Ok(())
    }

    pub fn optimize_range(&self) -> (f64, f64) {
        self.optimize.range.unwrap_or(self.sweep_range)
    }

    pub fn layout(&self, name: &str) -> Result<&LayoutSpec> {
        self.layouts
            .iter()
            .find(|l| l.name == name)
            .ok_or_else(|| Error::Config(format!("scenario has no layout named '{name}'")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const MINIMAL: &str = r#"{
  "version": "1.0",
  "signal": { "n_subcarriers": 64, "oversampling": 4, "n_symbols": 2, "drive_rms": 0.3 },
  "array": { "K": 2, "S": 4, "adjacent_db": -10 },
  "dpd": { "spec": { "order_P": 7, "terms": [[0,0],[1,0],[0,1]] } },
  "layouts": [ { "name": "ff", "scheme": "ff" }, { "name": "lc", "scheme": "lc", "r": "1/2", "nu": 1 } ],
  "phi0": 0.0,
  "sweep_range": [-1.0, 1.0],
  "sweep_points": 11,
  "acpr": { "channel_bw": 0.25, "guard": 0.02 },
  "seeds": { "signal": 1, "pa_bank": 2, "identification": 3 }
}"#;

    #[test]
    fn parses_with_defaults() {
        let sc = Scenario::from_json(MINIMAL).unwrap();
        assert_eq!(sc.array.spacing, 0.5);
        assert_eq!(sc.dpd.max_iter, 50);
        assert_eq!(sc.layouts[1].r, Ratio::new(1, 2).unwrap());
        assert_eq!(sc.optimize_range(), (-1.0, 1.0));
        let back = Scenario::from_json(&sc.to_json().unwrap()).unwrap();
        assert_eq!(back, sc);
    }

    #[test]
    fn rejects_unknown_major() {
        let err = Scenario::from_json(&MINIMAL.replace("\"1.0\"", "\"2.0\"")).unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");
    }

    #[test]
    fn names_offending_field_and_line() {
        let err = Scenario::from_json(&MINIMAL.replace("\"drive_rms\": 0.3", "\"drive_rms\": -1")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("signal.drive_rms") && msg.contains("line 3"), "{msg}");
        let err = Scenario::from_json(&MINIMAL.replace("\"K\": 2", "\"K\": 2, \"bogus\": 1")).unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
        let err = Scenario::from_json(&MINIMAL.replace("\"sweep_points\": 11", "\"sweep_points\": 1")).unwrap_err();
        assert!(err.to_string().contains("sweep_points"), "{err}");
    }
}
