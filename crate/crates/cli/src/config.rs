//! Experiment configuration. JSON, unknown keys rejected.

use std::path::{Path, PathBuf};

use codex_core::admm::CodexConfig;
use codex_core::baselines::IfbpConfig;
use codex_core::experiment::{default_geometry, Method, Regularization};
use codex_core::phantom::PhantomKind;
use codex_core::prior::PriorConfig;
use codex_core::projector::{default_detector_count, Geometry};
use codex_core::sampling::{CodeKind, ExposureCode, SamplingPlan};
use codex_core::tomo::MbirConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Failure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodeName {
    Snapshot,
    Boxcar,
    Raskar,
    Custom,
}

/// Exposure code; its length is the plan's `k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodeSpec {
    pub kind: CodeName,
    /// `'0'`/`'1'` string, required for `custom`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bits: Option<String>,
}

impl CodeSpec {
    pub fn named(kind: CodeName) -> Self {
        Self { kind, bits: None }
    }

    pub fn build(&self, length: usize) -> Result<ExposureCode, Failure> {
        if self.bits.is_some() && self.kind != CodeName::Custom {
            return Err(Failure::config("code.bits is only allowed for custom codes"));
        }
        let code = match self.kind {
            CodeName::Snapshot => ExposureCode::snapshot(length)?,
            CodeName::Boxcar => ExposureCode::boxcar(length)?,
            CodeName::Raskar => ExposureCode::raskar(length)?,
            CodeName::Custom => {
                let text = self.bits.as_deref().ok_or_else(|| Failure::config("custom code needs code.bits"))?;
                let parsed: ExposureCode = text.parse()?;
                ExposureCode::build(CodeKind::Custom, length, Some(parsed.bits()))?
            }
        };
        Ok(code)
    }
}

/// Image grid and detector. Unset pitches follow the default geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySpec {
    pub n_side: usize,
    #[serde(default)]
    pub pixel_pitch: Option<f64>,
    #[serde(default)]
    pub detector_pitch: Option<f64>,
    #[serde(default)]
    pub num_detector_pixels: Option<usize>,
    #[serde(default)]
    pub center_offset: f64,
}

impl GeometrySpec {
    pub fn square(n_side: usize) -> Self {
        Self {
            n_side,
            pixel_pitch: None,
            detector_pitch: None,
            num_detector_pixels: None,
            center_offset: 0.0,
        }
    }

    pub fn resolve(&self) -> Result<Geometry, Failure> {
        if self.n_side == 0 {
            return Err(Failure::config("geometry.n_side must be positive"));
        }
        let base = default_geometry(self.n_side);
        let pixel_pitch = self.pixel_pitch.unwrap_or(base.pixel_pitch);
        let detector_pitch = self.detector_pitch.unwrap_or(pixel_pitch);
        let geometry = Geometry {
            n_side: self.n_side,
            pixel_pitch,
            detector_pitch,
            num_detector_pixels: self
                .num_detector_pixels
                .unwrap_or_else(|| default_detector_count(self.n_side, pixel_pitch, detector_pitch)),
            center_offset: self.center_offset,
        };
        geometry.validate()?;
        Ok(geometry)
    }
}

/// Grid of the `sweep` subcommand. Each code length `K` keeps the base plan's
/// `N_theta` and `M_theta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub codes: Vec<CodeName>,
    pub code_lengths: Vec<usize>,
    /// `null` entries are noiseless.
    pub lambda0: Vec<Option<f64>>,
    #[serde(default = "default_seeds")]
    pub seeds: u64,
}

fn default_seeds() -> u64 {
    5
}

fn default_phantom() -> PhantomKind {
    PhantomKind::Blobs
}

fn default_method() -> Method {
    Method::Codex
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub plan: SamplingPlan,
    pub code: CodeSpec,
    /// Source flux per chop; `null` gives noiseless data.
    #[serde(default)]
    pub lambda0: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    pub geometry: GeometrySpec,
    #[serde(default = "default_method")]
    pub method: Method,
    #[serde(default)]
    pub regularization: Regularization,
    /// `codex.prior` must stay unset; the prior comes from `regularization`.
    #[serde(default)]
    pub codex: CodexConfig,
    #[serde(default)]
    pub mbir: MbirConfig,
    #[serde(default)]
    pub ifbp: IfbpConfig,
    #[serde(default = "default_phantom")]
    pub phantom: PhantomKind,
    #[serde(default)]
    pub phantom_seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, Failure> {
        let config: Self = serde_json::from_str(text).map_err(|e| Failure::config(format!("invalid config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Hex SHA-256 of the compact JSON serialization.
    pub fn hash(&self) -> String {
        let compact = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(compact.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn exposure_code(&self) -> Result<ExposureCode, Failure> {
        self.code.build(self.plan.code_length())
    }

    pub fn validate(&self) -> Result<(), Failure> {
        let code = self.exposure_code()?;
        self.plan.check_code(&code)?;
        self.geometry.resolve()?;
        check_lambda0(self.lambda0)?;
        self.regularization.validate()?;
        if self.codex.prior != PriorConfig::default() {
            return Err(Failure::config("codex.prior is derived from `regularization`; remove it"));
        }
        self.codex.validate()?;
        if self.mbir.iterations == 0 {
            return Err(Failure::config("mbir.iterations must be at least 1"));
        }
        if self.geometry.n_side < 16 {
            return Err(Failure::config("geometry.n_side must be at least 16"));
        }
        if let PhantomKind::SiemensStar { spokes } = self.phantom {
            if spokes < 2 {
                return Err(Failure::config("phantom.spokes must be at least 2"));
            }
        }
        if let Some(sweep) = &self.sweep {
            if sweep.codes.is_empty() || sweep.code_lengths.is_empty() || sweep.lambda0.is_empty() {
                return Err(Failure::config("sweep axes must be non-empty"));
            }
            if sweep.seeds == 0 {
                return Err(Failure::config("sweep.seeds must be at least 1"));
            }
            if sweep.codes.contains(&CodeName::Custom) {
                return Err(Failure::config("sweeps support snapshot, boxcar and raskar codes"));
            }
            for &l in &sweep.lambda0 {
                check_lambda0(l)?;
            }
            if sweep.code_lengths.contains(&0) {
                return Err(Failure::config("sweep.code_lengths must be positive"));
            }
        }
        Ok(())
    }
}

fn check_lambda0(lambda0: Option<f64>) -> Result<(), Failure> {
    match lambda0 {
        Some(l) if !(l > 0.0 && l.is_finite()) => Err(Failure::config(format!("lambda0 must be positive and finite, got {l}"))),
        _ => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table_two() -> ExperimentConfig {
        ExperimentConfig {
            plan: SamplingPlan::new(52, 5, 27, 233).unwrap(),
            code: CodeSpec::named(CodeName::Boxcar),
            lambda0: None,
            seed: 3,
            geometry: GeometrySpec::square(64),
            method: Method::Codex,
            regularization: Regularization::default(),
            codex: CodexConfig::default(),
            mbir: MbirConfig::default(),
            ifbp: IfbpConfig::default(),
            phantom: PhantomKind::Blobs,
            phantom_seed: 0,
            output: None,
            sweep: None,
        }
    }

    #[test]
    fn round_trip_is_identity() {
        let mut config = table_two();
        config.lambda0 = Some(1e4);
        config.sweep = Some(SweepSpec {
            codes: vec![CodeName::Snapshot, CodeName::Raskar],
            code_lengths: vec![52, 104],
            lambda0: vec![Some(100.0), None],
            seeds: 2,
        });
        let parsed = ExperimentConfig::from_json(&config.to_json()).unwrap();
        assert_eq!(parsed, config);
        assert_eq!(parsed.hash(), config.hash());
    }

    #[test]
    fn minimal_config_fills_defaults() {
        let text = r#"{"plan": {"k": 52, "m": 5, "n": 27, "m_theta": 233},
                       "code": {"kind": "raskar"}, "geometry": {"n_side": 64}}"#;
        let config = ExperimentConfig::from_json(text).unwrap();
        assert_eq!(config.method, Method::Codex);
        assert_eq!(config.lambda0, None);
        assert_eq!(config.exposure_code().unwrap().len(), 52);
        assert_eq!(config.geometry.resolve().unwrap(), default_geometry(64));
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        let base = table_two().to_json();
        let extra = base.replacen('{', r#"{"colour": 1,"#, 1);
        assert!(matches!(ExperimentConfig::from_json(&extra), Err(Failure::Config(_))));

        let mut bad = table_two();
        bad.code = CodeSpec {
            kind: CodeName::Custom,
            bits: Some("101".into()),
        };
        assert!(matches!(bad.validate(), Err(Failure::Config(_))));
        let mut bad = table_two();
        bad.lambda0 = Some(-1.0);
        assert!(bad.validate().is_err());
        let mut bad = table_two();
        bad.codex.prior.beta = 2.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = table_two();
        let mut b = table_two();
        b.seed += 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
