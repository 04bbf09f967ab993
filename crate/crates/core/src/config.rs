//! File-based run configuration (TOML). Physical quantities carry their
//! unit in the key name; unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::decim::DecimConfig;
use crate::error::{Error, Result};
use crate::loopsim::ModulatorConfig;
use crate::metrics::{AnalysisSettings, TEST_TONE_HZ};
use crate::noisemodel::{NoiseParams, DEFAULT_FC_HZ, DEFAULT_S_DDA_TH};
use crate::sigproc::{SnrSettings, Window};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: String,
    /// Written into echoed configs; ignored on input.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tool_version: Option<String>,
    pub modulator: ModulatorSection,
    pub stimulus: StimulusSection,
    pub noise: NoiseSection,
    pub analysis: AnalysisSection,
    pub decimation: DecimConfig,
    pub sweep: SweepSection,
    pub limits: LimitsSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModulatorSection {
    pub fs_hz: f64,
    pub substeps: usize,
    pub g: f64,
    pub r_ohm: f64,
    pub c_farad: f64,
    pub a_i: f64,
    pub a_f: f64,
    pub vfb_mv: f64,
    pub chopper_on: bool,
    pub f_ch_hz: f64,
    pub duration_samples: usize,
    pub clip_factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StimulusSection {
    pub amp_dbfs: f64,
    pub freq_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSection {
    pub enabled: bool,
    pub temperature_k: f64,
    pub s_dda_th_v2_per_hz: f64,
    pub fc_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    pub n_fft: usize,
    pub window: Window,
    pub bw_hz: f64,
    pub signal_half_width_bins: usize,
    pub dc_bins: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub amps_dbfs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LimitsSection {
    /// Fraction of sampling periods with clipping that makes `simulate` exit 2.
    pub max_overload_fraction: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: "out".into(),
            tool_version: None,
            modulator: ModulatorSection::default(),
            stimulus: StimulusSection::default(),
            noise: NoiseSection::default(),
            analysis: AnalysisSection::default(),
            decimation: DecimConfig::default(),
            sweep: SweepSection::default(),
            limits: LimitsSection::default(),
        }
    }
}

impl Default for ModulatorSection {
    fn default() -> Self {
        let m = ModulatorConfig::default();
        Self {
            fs_hz: m.fs_hz,
            substeps: m.substeps,
            g: m.g,
            r_ohm: m.r_ohm,
            c_farad: m.c_farad,
            a_i: m.a_i,
            a_f: m.a_f,
            vfb_mv: m.vfb_mv,
            chopper_on: m.chopper_on,
            f_ch_hz: m.f_ch_hz,
            duration_samples: m.duration_samples,
            clip_factor: m.clip_factor,
        }
    }
}

impl Default for StimulusSection {
    fn default() -> Self {
        Self { amp_dbfs: -3.0, freq_hz: TEST_TONE_HZ }
    }
}

impl Default for NoiseSection {
    fn default() -> Self {
        Self { enabled: false, temperature_k: 300.0, s_dda_th_v2_per_hz: DEFAULT_S_DDA_TH, fc_hz: DEFAULT_FC_HZ }
    }
}

impl Default for AnalysisSection {
    fn default() -> Self {
        let s = SnrSettings::default();
        Self { n_fft: 1 << 16, window: Window::Hann, bw_hz: 1e3, signal_half_width_bins: s.signal_half_width, dc_bins: s.dc_bins }
    }
}

impl Default for SweepSection {
    fn default() -> Self {
        let mut amps: Vec<f64> = (-11..=-1).map(|k| 10.0 * k as f64).collect();
        amps.extend([-6.0, -3.0, 0.0, 3.0]);
        Self { amps_dbfs: amps }
    }
}

impl Default for LimitsSection {
    fn default() -> Self {
        Self { max_overload_fraction: 0.01 }
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let mut c: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        c.tool_version = None;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Resolved configuration with the tool version recorded.
    pub fn to_toml_string(&self) -> Result<String> {
        let mut c = self.clone();
        c.tool_version = Some(tool_version());
        toml::to_string(&c).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.modulator_config().validate().map_err(cfg_err)?;
        self.decimation.validate().map_err(cfg_err)?;
        if self.noise.enabled {
            self.noise_params().map_err(cfg_err)?;
        }
        let a = &self.analysis;
        if !a.n_fft.is_power_of_two() || a.n_fft > self.modulator.duration_samples {
            return Err(Error::Config(format!(
                "analysis.n_fft = {} must be a power of two not above modulator.duration_samples",
                a.n_fft
            )));
        }
        if !(self.stimulus.freq_hz >= 0.0 && self.stimulus.freq_hz < a.bw_hz && a.bw_hz <= self.modulator.fs_hz / 2.0) {
            return Err(Error::Config("need 0 <= stimulus.freq_hz < analysis.bw_hz <= fs/2".into()));
        }
        if !(0.0..=1.0).contains(&self.limits.max_overload_fraction) {
            return Err(Error::Config("limits.max_overload_fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn modulator_config(&self) -> ModulatorConfig {
        let m = &self.modulator;
        ModulatorConfig {
            fs_hz: m.fs_hz,
            substeps: m.substeps,
            g: m.g,
            r_ohm: m.r_ohm,
            c_farad: m.c_farad,
            a_i: m.a_i,
            a_f: m.a_f,
            vfb_mv: m.vfb_mv,
            chopper_on: m.chopper_on,
            f_ch_hz: m.f_ch_hz,
            seed: self.seed,
            duration_samples: m.duration_samples,
            clip_factor: m.clip_factor,
        }
    }

    pub fn noise_params(&self) -> Result<NoiseParams> {
        let n = &self.noise;
        NoiseParams::new(n.temperature_k, n.s_dda_th_v2_per_hz, n.fc_hz, self.modulator.f_ch_hz, self.modulator_config().integrator())
    }

    pub fn analysis_settings(&self) -> AnalysisSettings {
        let a = &self.analysis;
        AnalysisSettings {
            n_fft: a.n_fft,
            window: a.window,
            bw_hz: a.bw_hz,
            sig_freq_hz: self.stimulus.freq_hz,
            snr: SnrSettings { signal_half_width: a.signal_half_width_bins, dc_bins: a.dc_bins },
        }
    }
}

fn cfg_err(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}

pub fn tool_version() -> String {
    format!("{} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_roundtrip() {
        let c = RunConfig::default();
        c.validate().unwrap();
        let text = c.to_toml_string().unwrap();
        assert!(text.contains("vfb_mv = 100.0"));
        assert!(text.contains("tool_version = \"dsm-afe "));
        let back = RunConfig::from_toml_str(&text).unwrap();
        assert_eq!(back.modulator, c.modulator);
        assert_eq!(back.to_toml_string().unwrap(), text);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(RunConfig::from_toml_str("vfb = 100\n"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_toml_str("[modulator]\nvfb = 0.1\n"), Err(Error::Config(_))));
    }

    #[test]
    fn partial_file_uses_defaults() {
        let c = RunConfig::from_toml_str("seed = 7\n[modulator]\nvfb_mv = 20.0\n").unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.modulator_config().vfb_v(), 0.02);
        assert_eq!(c.modulator.substeps, 16);
    }

    #[test]
    fn inconsistent_values_rejected() {
        assert!(RunConfig::from_toml_str("[modulator]\nc_farad = 1e-11\n").is_err());
        assert!(RunConfig::from_toml_str("[analysis]\nn_fft = 1000\n").is_err());
        assert!(RunConfig::from_toml_str("[stimulus]\nfreq_hz = 5000.0\n").is_err());
    }
}
