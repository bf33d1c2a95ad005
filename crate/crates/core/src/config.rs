//! Scenario configuration: TOML or JSON, validated before any simulation.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dsp::integer_ratio;
use crate::error::{Error, Result};
use crate::frontend::{ConverterModel, MultipathChannel, OsicLink};
use crate::metrics::WelchConfig;
use crate::waveform::PulseShape;

/// How the cancellation references are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReferenceMode {
    /// REF1 is an analog split of the transmit DAC output, REF2 comes from
    /// the adaptive filter through its own DAC channel.
    #[default]
    Dual,
    /// One adaptive reconstruction of the whole multipath SI through a
    /// single DAC channel.
    Single,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConverterConfig {
    pub bits: u32,
    /// Clip level in volts (DAC) or amps (ADC). When absent the converter
    /// is scaled so the peak of the signal it sees lands on the top code.
    #[serde(default)]
    pub full_scale: Option<f64>,
}

impl ConverterConfig {
    /// Converter model for a signal whose largest magnitude is `peak`.
    pub fn model_for(&self, peak: f64) -> Result<ConverterModel> {
        match self.full_scale {
            Some(fs) => ConverterModel::new(self.bits, fs),
            None => ConverterModel::for_peak(self.bits, peak),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RlsConfig {
    pub order: usize,
    #[serde(default = "one")]
    pub lambda: f64,
    #[serde(default = "one")]
    pub init_delta: f64,
    /// Samples of look-ahead in the regressor. Defaults to `min(16, order / 2)`.
    #[serde(default)]
    pub lead: Option<usize>,
    /// Training samples at the RLS rate.
    #[serde(default = "default_train_len")]
    pub train_len: usize,
    /// Leave the SOI on while training.
    #[serde(default)]
    pub soi_during_training: bool,
}

impl RlsConfig {
    pub fn effective_lead(&self) -> usize {
        self.lead.unwrap_or((self.order / 2).min(16))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub si: u64,
    pub soi: u64,
    pub noise: u64,
}

impl Seeds {
    /// Seeds derived from a single user-supplied value.
    pub fn from_master(seed: u64) -> Self {
        Self {
            si: seed,
            soi: seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1),
            noise: seed.wrapping_mul(0xD1B5_4A32_D192_ED03).wrapping_add(2),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    #[serde(default)]
    pub welch: WelchConfig,
    /// Depth band in Hz at the IF. Defaults to `IF ± si_baud (1 + β) / 2`.
    #[serde(default)]
    pub band: Option<[f64; 2]>,
    /// Symbols dropped at each record edge before any metric is taken.
    #[serde(default = "default_guard")]
    pub guard_symbols: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            welch: WelchConfig::default(),
            band: None,
            guard_symbols: default_guard(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: String,
    /// Master simulation rate for all analog waveforms, Hz.
    pub sample_rate: f64,
    /// Rate of the digital baseband and the adaptive filter, Hz.
    #[serde(default = "default_dsp_rate")]
    pub dsp_rate: f64,
    pub carrier: f64,
    pub lo_freq: f64,
    pub si_baud: f64,
    pub soi_baud: f64,
    /// SI symbols per record; the SOI record spans the same time.
    #[serde(default = "default_num_symbols")]
    pub num_symbols: usize,
    #[serde(default)]
    pub pulse: PulseShape,
    /// Direct-path SI power at the receive antenna, dBm into 1 Ω.
    pub si_power_dbm: f64,
    pub lo_power_dbm: f64,
    /// SOI power relative to the direct-path SI, dB. Absent disables the SOI.
    #[serde(default)]
    pub soi_power_db: Option<f64>,
    pub channel: MultipathChannel,
    #[serde(default)]
    pub ref1_gain_error_db: f64,
    /// Seconds.
    #[serde(default)]
    pub ref1_delay_error: f64,
    pub dac: ConverterConfig,
    pub adc: ConverterConfig,
    pub osic: OsicLink,
    pub rls: RlsConfig,
    /// Receiver noise power over the full master-rate Nyquist band, dBm.
    pub noise_floor_dbm: f64,
    pub seeds: Seeds,
    #[serde(default)]
    pub reference_mode: ReferenceMode,
    #[serde(default)]
    pub metrics: MetricsConfig,
    /// DAC resolutions visited by the reference-mode comparison.
    #[serde(default = "default_compare_bits")]
    pub compare_bits: Vec<u32>,
}

fn one() -> f64 {
    1.0
}
fn default_train_len() -> usize {
    8192
}
fn default_guard() -> usize {
    64
}
fn default_dsp_rate() -> f64 {
    4e9
}
fn default_num_symbols() -> usize {
    4096
}
fn default_compare_bits() -> Vec<u32> {
    vec![6, 8, 10, 12, 14]
}

/// Committed scenario presets.
pub const PRESETS: [(&str, &str); 4] = [
    ("presetA_0p5G", include_str!("../presets/presetA_0p5G.toml")),
    ("presetA_1G", include_str!("../presets/presetA_1G.toml")),
    ("presetB_0p5G", include_str!("../presets/presetB_0p5G.toml")),
    ("presetB_1G", include_str!("../presets/presetB_1G.toml")),
];

/// Turn a serde error at `path` into a config error naming the full key.
fn keyed(path: &serde_path_to_error::Path, message: String) -> Error {
    let mut key = path.to_string();
    if key == "." {
        key.clear();
    }
    if let Some(rest) = message.strip_prefix("missing field `") {
        if let Some(field) = rest.split('`').next() {
            key = if key.is_empty() {
                field.to_string()
            } else {
                format!("{key}.{field}")
            };
        }
    }
    if key.is_empty() {
        key = "<root>".into();
    }
    Error::Config { key, message }
}

impl ScenarioConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let de = toml::Deserializer::new(s);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let msg = e.inner().message().trim().to_string();
            keyed(e.path(), msg)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let mut de = serde_json::Deserializer::from_str(s);
        let cfg: Self = serde_path_to_error::deserialize(&mut de).map_err(|e| {
            let msg = e.inner().to_string();
            // serde_json appends " at line L column C"; keep only the message.
            let msg = msg.split(" at line ").next().unwrap_or(&msg).to_string();
            keyed(e.path(), msg)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Load a `.json` file as JSON and anything else as TOML.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
            key: "<file>".into(),
            message: format!("cannot read {}: {e}", path.display()),
        })?;
        if path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("json"))
        {
            Self::from_json_str(&text)
        } else {
            Self::from_toml_str(&text)
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        let (_, text) = PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| Error::invalid(format!("unknown preset `{name}`")))?;
        Self::from_toml_str(text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seeds = Seeds::from_master(seed);
        self
    }

    pub fn intermediate_freq(&self) -> f64 {
        self.carrier - self.lo_freq
    }

    /// Occupied half-bandwidth of the SI, Hz.
    pub fn si_half_band(&self) -> f64 {
        self.si_baud * (1.0 + self.pulse.beta) / 2.0
    }

    /// Depth integration band at the IF.
    pub fn depth_band(&self) -> (f64, f64) {
        match self.metrics.band {
            Some([lo, hi]) => (lo, hi),
            None => {
                let f = self.intermediate_freq();
                (f - self.si_half_band(), f + self.si_half_band())
            }
        }
    }

    /// Record length in seconds.
    pub fn duration(&self) -> f64 {
        self.num_symbols as f64 / self.si_baud
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |key: &str, v: f64| -> Result<()> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(
                    key,
                    format!("must be a positive finite number, got {v}"),
                ))
            }
        };
        positive("sample_rate", self.sample_rate)?;
        positive("dsp_rate", self.dsp_rate)?;
        positive("carrier", self.carrier)?;
        positive("lo_freq", self.lo_freq)?;
        positive("si_baud", self.si_baud)?;
        positive("soi_baud", self.soi_baud)?;
        if self.lo_freq >= self.carrier {
            return Err(Error::config(
                "lo_freq",
                format!(
                    "must be below the carrier ({} Hz), got {}",
                    self.carrier, self.lo_freq
                ),
            ));
        }
        let if_freq = self.intermediate_freq();
        if if_freq <= self.si_half_band() {
            return Err(Error::config(
                "lo_freq",
                format!(
                    "IF of {if_freq} Hz does not clear the SI half-bandwidth of {} Hz",
                    self.si_half_band()
                ),
            ));
        }
        if (self.osic.if_center - if_freq).abs() > 1e-6 * if_freq {
            return Err(Error::config(
                "osic.if_center",
                format!(
                    "must equal carrier - lo_freq = {if_freq} Hz, got {}",
                    self.osic.if_center
                ),
            ));
        }
        self.osic.validate()?;
        if integer_ratio(self.sample_rate, self.dsp_rate).is_none() {
            return Err(Error::config("dsp_rate", "must divide sample_rate"));
        }
        if self.carrier + self.dsp_rate / 2.0 > self.sample_rate / 2.0 {
            return Err(Error::config(
                "carrier",
                "carrier plus baseband half-rate exceeds Nyquist",
            ));
        }
        if integer_ratio(self.dsp_rate, self.si_baud).is_none() {
            return Err(Error::config("si_baud", "must divide dsp_rate"));
        }
        if integer_ratio(self.dsp_rate, self.soi_baud).is_none() || self.soi_baud > self.si_baud {
            return Err(Error::config(
                "soi_baud",
                "must divide dsp_rate and not exceed si_baud",
            ));
        }
        if self.si_half_band() >= self.dsp_rate / 2.0 {
            return Err(Error::config("dsp_rate", "too low for the SI bandwidth"));
        }
        if !(self.pulse.beta > 0.0 && self.pulse.beta <= 1.0) {
            return Err(Error::config("pulse.beta", "must lie in (0, 1]"));
        }
        let soi_symbols = self.soi_symbols();
        if soi_symbols < 4 * self.pulse.span + 64 {
            return Err(Error::config(
                "num_symbols",
                "record too short for SOI demodulation",
            ));
        }
        if 2 * self.metrics.guard_symbols + 4 * self.pulse.span >= self.num_symbols {
            return Err(Error::config(
                "metrics.guard_symbols",
                "guard leaves no record to measure",
            ));
        }
        self.channel.validate()?;
        for (key, c) in [("dac", &self.dac), ("adc", &self.adc)] {
            if !(1..=16).contains(&c.bits) {
                return Err(Error::config(
                    format!("{key}.bits"),
                    format!("must be 1..=16, got {}", c.bits),
                ));
            }
            if let Some(fs) = c.full_scale {
                positive(&format!("{key}.full_scale"), fs)?;
            }
        }
        if self.rls.order == 0 {
            return Err(Error::config("rls.order", "must be >= 1"));
        }
        if !(self.rls.lambda > 0.0 && self.rls.lambda <= 1.0) {
            return Err(Error::config("rls.lambda", "must lie in (0, 1]"));
        }
        positive("rls.init_delta", self.rls.init_delta)?;
        if self.rls.train_len < 10 * self.rls.order {
            return Err(Error::config(
                "rls.train_len",
                "must be at least 10 x rls.order",
            ));
        }
        if self.rls.train_len + 2 * self.guard_samples() > self.dsp_samples() {
            return Err(Error::config(
                "rls.train_len",
                "longer than the guarded record",
            ));
        }
        if !self.noise_floor_dbm.is_finite() && self.noise_floor_dbm != f64::NEG_INFINITY {
            return Err(Error::config("noise_floor_dbm", "must be finite or -inf"));
        }
        if let Some(p) = self.soi_power_db {
            if !p.is_finite() {
                return Err(Error::config("soi_power_db", "must be finite"));
            }
        }
        if !(self.ref1_gain_error_db.is_finite() && self.ref1_delay_error.is_finite()) {
            return Err(Error::config(
                "ref1_gain_error_db",
                "REF1 errors must be finite",
            ));
        }
        if self.ref1_delay_error.abs() > 1.0 / self.si_baud {
            return Err(Error::config(
                "ref1_delay_error",
                "must stay within one symbol",
            ));
        }
        if let Some([lo, hi]) = self.metrics.band {
            if !(lo < hi && lo >= 0.0 && hi <= self.sample_rate / 2.0) {
                return Err(Error::config(
                    "metrics.band",
                    "must be an increasing pair inside Nyquist",
                ));
            }
        }
        let w = self.metrics.welch;
        if !(0.0..1.0).contains(&w.overlap) || w.segment < 16 {
            return Err(Error::config(
                "metrics.welch",
                "segment >= 16 and overlap in [0, 1) required",
            ));
        }
        if w.segment > self.measured_samples() {
            return Err(Error::config(
                "metrics.welch.segment",
                "longer than the measured record",
            ));
        }
        for &b in &self.compare_bits {
            if !(1..=16).contains(&b) {
                return Err(Error::config("compare_bits", format!("{b} outside 1..=16")));
            }
        }
        Ok(())
    }

    pub(crate) fn soi_symbols(&self) -> usize {
        ((self.num_symbols as f64) * self.soi_baud / self.si_baud).round() as usize
    }

    /// Samples per record at the DSP rate.
    pub(crate) fn dsp_samples(&self) -> usize {
        (self.duration() * self.dsp_rate).round() as usize
    }

    /// Guard at each edge in DSP-rate samples.
    pub(crate) fn guard_samples(&self) -> usize {
        (self.metrics.guard_symbols as f64 * self.dsp_rate / self.si_baud).round() as usize
    }

    /// Master-rate samples left between the guards.
    pub(crate) fn measured_samples(&self) -> usize {
        let total = (self.duration() * self.sample_rate).round() as usize;
        let guard =
            (self.metrics.guard_symbols as f64 * self.sample_rate / self.si_baud).round() as usize;
        total.saturating_sub(2 * guard)
    }
}
