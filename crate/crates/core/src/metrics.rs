//! Spectral estimation, cancellation depth and EVM.

use std::f64::consts::PI;
use std::fmt::Write as _;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dsp::{fft_in_place, RealWaveform};
use crate::error::{Error, Result};
use crate::waveform::MIN_DEMOD_SYMBOLS;

/// One-sided power spectral density.
#[derive(Debug, Clone, PartialEq)]
pub struct PsdEstimate {
    pub frequencies: Vec<f64>,
    /// W/Hz into 1 Ω.
    pub density: Vec<f64>,
    /// Equivalent noise bandwidth of one bin, Hz.
    pub resolution_bandwidth: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchConfig {
    pub segment: usize,
    pub overlap: f64,
}

impl Default for WelchConfig {
    fn default() -> Self {
        Self {
            segment: 8192,
            overlap: 0.5,
        }
    }
}

/// Hann-windowed averaged periodogram, scaled so the density integrates to
/// the mean-square value of the record.
pub fn welch_psd(w: &RealWaveform, segment: usize, overlap: f64) -> Result<PsdEstimate> {
    if segment < 2 || segment > w.len() {
        return Err(Error::invalid(format!(
            "segment of {segment} samples does not fit a record of {}",
            w.len()
        )));
    }
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::invalid(format!("overlap {overlap} outside [0, 1)")));
    }
    let fs = w.sample_rate;
    let window: Vec<f64> = (0..segment)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / segment as f64).cos())
        .collect();
    let wsum: f64 = window.iter().sum();
    let wpow: f64 = window.iter().map(|v| v * v).sum();
    let hop = ((segment as f64 * (1.0 - overlap)).floor() as usize).max(1);

    let bins = segment / 2 + 1;
    let mut acc = vec![0.0; bins];
    let mut count = 0usize;
    let mut buf = vec![Complex64::new(0.0, 0.0); segment];
    let mut start = 0;
    while start + segment <= w.len() {
        for (i, b) in buf.iter_mut().enumerate() {
            *b = Complex64::new(w.samples[start + i] * window[i], 0.0);
        }
        fft_in_place(&mut buf);
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a += b.norm_sqr();
        }
        count += 1;
        start += hop;
    }
    let scale = 1.0 / (fs * wpow * count as f64);
    let density = acc
        .iter()
        .enumerate()
        .map(|(k, a)| {
            let one_sided = if k == 0 || (segment.is_multiple_of(2) && k == segment / 2) {
                1.0
            } else {
                2.0
            };
            a * scale * one_sided
        })
        .collect();
    let frequencies = (0..bins).map(|k| k as f64 * fs / segment as f64).collect();
    Ok(PsdEstimate {
        frequencies,
        density,
        resolution_bandwidth: fs * wpow / (wsum * wsum),
    })
}

impl PsdEstimate {
    fn bin_width(&self) -> f64 {
        if self.frequencies.len() > 1 {
            self.frequencies[1] - self.frequencies[0]
        } else {
            0.0
        }
    }

    fn interp(&self, f: f64) -> f64 {
        let df = self.bin_width();
        let pos = f / df;
        let i = (pos.floor() as usize).min(self.density.len() - 2);
        let t = pos - i as f64;
        self.density[i] * (1.0 - t) + self.density[i + 1] * t
    }

    /// Largest density in `[f_lo, f_hi]`.
    pub fn peak_in(&self, f_lo: f64, f_hi: f64) -> f64 {
        self.frequencies
            .iter()
            .zip(&self.density)
            .filter(|(f, _)| **f >= f_lo && **f <= f_hi)
            .map(|(_, d)| *d)
            .fold(0.0, f64::max)
    }
}

/// Trapezoidal integral of the density over `[f_lo, f_hi]`.
pub fn band_power(psd: &PsdEstimate, f_lo: f64, f_hi: f64) -> Result<f64> {
    let top = *psd.frequencies.last().unwrap_or(&0.0);
    if !(f_lo < f_hi && f_lo >= 0.0 && f_hi <= top) || psd.frequencies.len() < 2 {
        return Err(Error::invalid(format!(
            "band [{f_lo}, {f_hi}] Hz outside the PSD grid [0, {top}] Hz"
        )));
    }
    let mut pts: Vec<(f64, f64)> = vec![(f_lo, psd.interp(f_lo))];
    pts.extend(
        psd.frequencies
            .iter()
            .zip(&psd.density)
            .filter(|(f, _)| **f > f_lo && **f < f_hi)
            .map(|(f, d)| (*f, *d)),
    );
    pts.push((f_hi, psd.interp(f_hi)));
    Ok(pts
        .windows(2)
        .map(|p| 0.5 * (p[0].1 + p[1].1) * (p[1].0 - p[0].0))
        .sum())
}

/// In-band power ratio between two records.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CancellationDepth {
    /// Band-integrated depth, dB.
    pub depth_db: f64,
    /// Ratio of the in-band PSD peaks, dB.
    pub peak_delta_db: f64,
    /// True when the after-power is zero and the depth reports the
    /// numerical floor instead.
    pub floor_limited: bool,
    pub before_power: f64,
    pub after_power: f64,
}

/// Relative power floor used when the cancelled record is exactly zero.
pub const NUMERICAL_FLOOR: f64 = f64::EPSILON * f64::EPSILON;

pub fn cancellation_depth(
    before: &RealWaveform,
    after: &RealWaveform,
    band: (f64, f64),
    welch: WelchConfig,
) -> Result<CancellationDepth> {
    if before.sample_rate != after.sample_rate {
        return Err(Error::Mismatch(format!(
            "before @ {} Hz vs after @ {} Hz",
            before.sample_rate, after.sample_rate
        )));
    }
    let pb = welch_psd(before, welch.segment, welch.overlap)?;
    let pa = welch_psd(after, welch.segment, welch.overlap)?;
    let before_power = band_power(&pb, band.0, band.1)?;
    let after_power = band_power(&pa, band.0, band.1)?;
    let floor = before_power * NUMERICAL_FLOOR;
    let floor_limited = after_power <= floor;
    let ratio_db = |b: f64, a: f64| -> f64 {
        if b == a {
            0.0
        } else {
            10.0 * (b / a.max(floor).max(f64::MIN_POSITIVE)).log10()
        }
    };
    let peak_b = pb.peak_in(band.0, band.1);
    let peak_a = pa.peak_in(band.0, band.1);
    Ok(CancellationDepth {
        depth_db: ratio_db(before_power, after_power),
        peak_delta_db: ratio_db(peak_b, peak_a),
        floor_limited,
        before_power,
        after_power,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvmReport {
    pub evm_pct: f64,
    pub constellation: Vec<Complex64>,
    pub num_symbols: usize,
}

/// `100 · RMS(estimates - reference) / RMS(reference)`. The estimates are
/// expected to be gain-normalized already.
pub fn evm_percent(estimates: &[Complex64], reference: &[Complex64]) -> Result<EvmReport> {
    if estimates.len() != reference.len() {
        return Err(Error::Mismatch(format!(
            "{} estimates vs {} reference symbols",
            estimates.len(),
            reference.len()
        )));
    }
    if estimates.len() < MIN_DEMOD_SYMBOLS {
        return Err(Error::invalid(format!(
            "EVM needs at least {MIN_DEMOD_SYMBOLS} symbols, got {}",
            estimates.len()
        )));
    }
    let err: f64 = estimates
        .iter()
        .zip(reference)
        .map(|(e, r)| (e - r).norm_sqr())
        .sum();
    let refp: f64 = reference.iter().map(|r| r.norm_sqr()).sum();
    Ok(EvmReport {
        evm_pct: 100.0 * (err / refp).sqrt(),
        constellation: estimates.to_vec(),
        num_symbols: estimates.len(),
    })
}

/// Densities below this are written as this value so CSV fields stay finite.
const MIN_DBM_PER_HZ: f64 = -400.0;

/// `freq_hz,psd_dbm_per_hz`.
pub fn psd_csv(psd: &PsdEstimate) -> String {
    let mut out = String::from("freq_hz,psd_dbm_per_hz\n");
    for (f, d) in psd.frequencies.iter().zip(&psd.density) {
        let dbm = if *d > 0.0 {
            (10.0 * d.log10() + 30.0).max(MIN_DBM_PER_HZ)
        } else {
            MIN_DBM_PER_HZ
        };
        let _ = writeln!(out, "{f:.1},{dbm:.4}");
    }
    out
}

/// `index,i,q`.
pub fn constellation_csv(points: &[Complex64]) -> String {
    let mut out = String::from("index,i,q\n");
    for (k, p) in points.iter().enumerate() {
        let _ = writeln!(out, "{k},{:.6e},{:.6e}", p.re, p.im);
    }
    out
}
