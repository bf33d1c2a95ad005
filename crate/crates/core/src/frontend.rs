//! Behavioral models of the converters, the multipath air channel and the
//! photonic link that performs cancellation and downconversion in one
//! square-law step.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dsp::{bin_freq, fft_in_place, fractional_delay, ifft_in_place, scale_db, RealWaveform};
use crate::error::{Error, Result};

/// Uniform mid-tread converter with symmetric clip level `full_scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConverterModel {
    pub bits: u32,
    pub full_scale: f64,
}

impl ConverterModel {
    pub fn new(bits: u32, full_scale: f64) -> Result<Self> {
        let conv = Self { bits, full_scale };
        conv.validate()?;
        Ok(conv)
    }

    /// Smallest converter whose top code still holds `peak` without
    /// clipping, i.e. a signal that uses the full scale.
    pub fn for_peak(bits: u32, peak: f64) -> Result<Self> {
        let peak = if peak > 0.0 { peak } else { 1.0 };
        let steps = 2f64.powi(bits as i32 - 1);
        let full_scale = if steps > 1.0 {
            peak * steps / (steps - 1.0)
        } else {
            2.0 * peak
        };
        Self::new(bits, full_scale)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=16).contains(&self.bits) {
            return Err(Error::invalid(format!(
                "converter bits {} outside 1..=16",
                self.bits
            )));
        }
        if !(self.full_scale > 0.0 && self.full_scale.is_finite()) {
            return Err(Error::invalid(format!(
                "converter full scale must be > 0, got {}",
                self.full_scale
            )));
        }
        Ok(())
    }

    /// Quantization step.
    pub fn step(&self) -> f64 {
        2.0 * self.full_scale / 2f64.powi(self.bits as i32)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Quantized {
    pub waveform: RealWaveform,
    pub clipped: usize,
}

impl Quantized {
    pub fn clip_fraction(&self) -> f64 {
        if self.waveform.is_empty() {
            0.0
        } else {
            self.clipped as f64 / self.waveform.len() as f64
        }
    }
}

/// `q * round(x / q)` clipped to `[-full_scale, full_scale - q]`.
pub fn quantize(w: &RealWaveform, conv: ConverterModel) -> Quantized {
    let q = conv.step();
    let lo = -conv.full_scale;
    let hi = conv.full_scale - q;
    let mut clipped = 0;
    let samples = w
        .samples
        .iter()
        .map(|&x| {
            let v = q * (x / q).round();
            if v > hi {
                clipped += 1;
                hi
            } else if v < lo {
                clipped += 1;
                lo
            } else {
                v
            }
        })
        .collect();
    Quantized {
        waveform: RealWaveform {
            samples,
            sample_rate: w.sample_rate,
        },
        clipped,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultipathTap {
    /// Seconds.
    pub delay: f64,
    /// dB; reflection taps sit at or below the direct path.
    pub gain_db: f64,
    /// Radians at the carrier.
    #[serde(default)]
    pub phase: f64,
}

/// Tapped-delay-line channel. The first tap is the direct path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultipathChannel {
    pub taps: Vec<MultipathTap>,
}

impl MultipathChannel {
    pub fn validate(&self) -> Result<()> {
        let direct = self
            .taps
            .first()
            .ok_or_else(|| Error::config("channel.taps", "at least one tap is required"))?;
        for (i, t) in self.taps.iter().enumerate() {
            if !(t.delay >= 0.0 && t.delay.is_finite()) {
                return Err(Error::config(
                    format!("channel.taps[{i}].delay"),
                    format!("delay must be >= 0, got {}", t.delay),
                ));
            }
            if !(t.gain_db.is_finite() && t.phase.is_finite()) {
                return Err(Error::config(
                    format!("channel.taps[{i}]"),
                    "non-finite gain or phase",
                ));
            }
            if i > 0 && t.gain_db > direct.gain_db {
                return Err(Error::config(
                    format!("channel.taps[{i}].gain_db"),
                    "reflection tap is stronger than the direct path",
                ));
            }
        }
        Ok(())
    }

    /// Carrier phase folded into an equivalent delay.
    pub fn effective_delay(tap: &MultipathTap, carrier: f64) -> f64 {
        tap.delay + tap.phase / (2.0 * PI * carrier)
    }
}

fn apply_tap(w: &RealWaveform, tap: &MultipathTap, carrier: f64) -> Result<RealWaveform> {
    let delayed = fractional_delay(w, MultipathChannel::effective_delay(tap, carrier))?;
    Ok(scale_db(&delayed, tap.gain_db))
}

/// Sum of delayed, scaled copies of `w`, one per tap.
pub fn channel_apply(
    w: &RealWaveform,
    ch: &MultipathChannel,
    carrier: f64,
) -> Result<RealWaveform> {
    ch.validate()?;
    let mut out = RealWaveform::zeros(w.len(), w.sample_rate);
    for tap in &ch.taps {
        out = out.add(&apply_tap(w, tap, carrier)?)?;
    }
    Ok(out)
}

/// Only the direct-path tap of `ch`.
pub fn direct_path(w: &RealWaveform, ch: &MultipathChannel, carrier: f64) -> Result<RealWaveform> {
    ch.validate()?;
    apply_tap(w, &ch.taps[0], carrier)
}

/// Dual-drive modulator at minimum transmission followed by a photodetector
/// and an IF bandpass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OsicLink {
    /// Volts.
    pub v_pi: f64,
    /// Amps; lumps optical power, insertion loss and responsivity.
    pub output_scale: f64,
    pub if_center: f64,
    pub if_bandwidth: f64,
}

impl OsicLink {
    pub fn validate(&self) -> Result<()> {
        if !(self.v_pi > 0.0) {
            return Err(Error::config("osic.v_pi", "must be > 0"));
        }
        if !(self.output_scale > 0.0) {
            return Err(Error::config("osic.output_scale", "must be > 0"));
        }
        if !(self.if_bandwidth > 0.0 && self.if_bandwidth < 2.0 * self.if_center) {
            return Err(Error::config(
                "osic.if_bandwidth",
                format!(
                    "must lie in (0, 2 * if_center = {}), got {}",
                    2.0 * self.if_center,
                    self.if_bandwidth
                ),
            ));
        }
        Ok(())
    }

    /// Small-signal gain from an RF drive envelope on the lower arm to the
    /// IF photocurrent envelope when a LO tone of amplitude `lo_amplitude`
    /// rides on the same arm. Exact in the LO (first-order Bessel term).
    pub fn conversion_gain(&self, lo_amplitude: f64) -> f64 {
        let k = PI / self.v_pi;
        self.output_scale * k * bessel_j1(k * lo_amplitude)
    }

    /// Width of each raised-cosine skirt of the IF filter.
    fn skirt(&self) -> f64 {
        0.1 * self.if_bandwidth
    }
}

/// First-kind Bessel function of order one, power series. Accurate for the
/// modest arguments a modulator drive produces.
pub fn bessel_j1(x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = half;
    let mut sum = term;
    for m in 1..40 {
        term *= -half * half / (m as f64 * (m + 1) as f64);
        sum += term;
        if term.abs() < 1e-17 * sum.abs() {
            break;
        }
    }
    sum
}

/// Raw photocurrent `output_scale * (1 - cos(π (v_lower - v_upper) / v_pi))`.
pub fn photocurrent(
    v_lower: &RealWaveform,
    v_upper: &RealWaveform,
    link: &OsicLink,
) -> Result<RealWaveform> {
    if v_lower.sample_rate != v_upper.sample_rate || v_lower.len() != v_upper.len() {
        return Err(Error::Mismatch(format!(
            "modulator arms differ: {} samples @ {} Hz vs {} samples @ {} Hz",
            v_lower.len(),
            v_lower.sample_rate,
            v_upper.len(),
            v_upper.sample_rate
        )));
    }
    let k = PI / link.v_pi;
    let samples = v_lower
        .samples
        .iter()
        .zip(&v_upper.samples)
        .map(|(a, b)| link.output_scale * (1.0 - (k * (a - b)).cos()))
        .collect();
    Ok(RealWaveform {
        samples,
        sample_rate: v_lower.sample_rate,
    })
}

/// Zero-phase bandpass with a flat passband over `[lo, hi]` and
/// raised-cosine skirts of width `skirt` outside it. Applied circularly.
pub fn bandpass_fft(w: &RealWaveform, lo: f64, hi: f64, skirt: f64) -> RealWaveform {
    let n = w.len();
    if n == 0 {
        return w.clone();
    }
    let mut buf: Vec<Complex64> = w.samples.iter().map(|&s| Complex64::new(s, 0.0)).collect();
    fft_in_place(&mut buf);
    for (k, v) in buf.iter_mut().enumerate() {
        let f = bin_freq(k, n).abs() * w.sample_rate;
        *v *= band_mask(f, lo, hi, skirt);
    }
    ifft_in_place(&mut buf);
    RealWaveform {
        samples: buf.into_iter().map(|v| v.re).collect(),
        sample_rate: w.sample_rate,
    }
}

fn band_mask(f: f64, lo: f64, hi: f64, skirt: f64) -> f64 {
    let edge = |d: f64| -> f64 {
        // d: distance outside the passband.
        if d <= 0.0 {
            1.0
        } else if d >= skirt {
            0.0
        } else {
            0.5 * (1.0 + (PI * d / skirt).cos())
        }
    };
    if f < lo {
        edge(lo - f)
    } else if f > hi {
        edge(f - hi)
    } else {
        1.0
    }
}

/// IF output of the link: photocurrent bandpassed to
/// `if_center ± if_bandwidth / 2`. The drive difference performs the
/// cancellation, the square law performs the LO mixing.
pub fn osic_output(
    v_lower: &RealWaveform,
    v_upper: &RealWaveform,
    link: &OsicLink,
) -> Result<RealWaveform> {
    link.validate()?;
    let i = photocurrent(v_lower, v_upper, link)?;
    let half = link.if_bandwidth / 2.0;
    Ok(bandpass_fft(
        &i,
        link.if_center - half,
        link.if_center + half,
        link.skirt(),
    ))
}
