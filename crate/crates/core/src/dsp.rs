//! Sampled-signal types and the DSP primitives shared by the rest of the
//! simulator: mixing, FIR design and filtering, fractional delay, pulse
//! shaping and additive noise.
//!
//! All operations are batch and pure. Passband signals are real-valued at a
//! single master rate; digital baseband signals are complex envelopes.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniformly sampled real passband voltage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealWaveform {
    pub samples: Vec<f64>,
    pub sample_rate: f64,
}

/// Complex baseband equivalent of a signal around `center_freq`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexEnvelope {
    pub samples: Vec<Complex64>,
    pub sample_rate: f64,
    pub center_freq: f64,
}

/// FIR coefficients together with their nominal group delay in samples.
#[derive(Debug, Clone, PartialEq)]
pub struct FirTaps {
    pub coefficients: Vec<f64>,
    pub group_delay: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FilterKind {
    /// Lowpass with cutoff at the given edge.
    Lowpass(f64),
    /// Bandpass between two edges.
    Bandpass(f64, f64),
}

fn check_rate(sample_rate: f64) -> Result<()> {
    if !(sample_rate.is_finite() && sample_rate > 0.0) {
        return Err(Error::invalid(format!(
            "sample rate must be > 0, got {sample_rate}"
        )));
    }
    Ok(())
}

impl RealWaveform {
    pub fn new(samples: Vec<f64>, sample_rate: f64) -> Result<Self> {
        check_rate(sample_rate)?;
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::invalid(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn zeros(len: usize, sample_rate: f64) -> Self {
        Self {
            samples: vec![0.0; len],
            sample_rate,
        }
    }

    /// `amplitude * cos(2π f t + phase)` sampled at `sample_rate`.
    pub fn tone(len: usize, sample_rate: f64, freq: f64, amplitude: f64, phase: f64) -> Self {
        let w = 2.0 * PI * freq / sample_rate;
        let samples = (0..len)
            .map(|n| amplitude * (w * n as f64 + phase).cos())
            .collect();
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }

    /// Sample-wise sum. Both waveforms must share rate and length.
    pub fn add(&self, other: &RealWaveform) -> Result<RealWaveform> {
        ensure_same_grid(self.sample_rate, self.len(), other.sample_rate, other.len())?;
        let samples = self
            .samples
            .iter()
            .zip(&other.samples)
            .map(|(a, b)| a + b)
            .collect();
        Ok(RealWaveform {
            samples,
            sample_rate: self.sample_rate,
        })
    }

    pub fn sub(&self, other: &RealWaveform) -> Result<RealWaveform> {
        self.add(&other.scaled(-1.0))
    }

    pub fn scaled(&self, factor: f64) -> RealWaveform {
        RealWaveform {
            samples: self.samples.iter().map(|s| s * factor).collect(),
            sample_rate: self.sample_rate,
        }
    }

    pub fn mean_square(&self) -> f64 {
        mean_square_real(&self.samples)
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0f64, |m, s| m.max(s.abs()))
    }
}

impl ComplexEnvelope {
    pub fn new(samples: Vec<Complex64>, sample_rate: f64, center_freq: f64) -> Result<Self> {
        check_rate(sample_rate)?;
        if !(center_freq.is_finite() && center_freq >= 0.0) {
            return Err(Error::invalid(format!(
                "center frequency must be >= 0, got {center_freq}"
            )));
        }
        if let Some(i) = samples
            .iter()
            .position(|s| !(s.re.is_finite() && s.im.is_finite()))
        {
            return Err(Error::invalid(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
            center_freq,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn mean_square(&self) -> f64 {
        mean_square_complex(&self.samples)
    }

    pub fn scaled(&self, factor: Complex64) -> ComplexEnvelope {
        ComplexEnvelope {
            samples: self.samples.iter().map(|s| s * factor).collect(),
            ..self.clone()
        }
    }
}

fn ensure_same_grid(rate_a: f64, len_a: usize, rate_b: f64, len_b: usize) -> Result<()> {
    if rate_a != rate_b || len_a != len_b {
        return Err(Error::Mismatch(format!(
            "({len_a} samples @ {rate_a} Hz) vs ({len_b} samples @ {rate_b} Hz)"
        )));
    }
    Ok(())
}

pub fn mean_square_real(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

pub fn mean_square_complex(x: &[Complex64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|v| v.norm_sqr()).sum::<f64>() / x.len() as f64
}

/// Power in watts of `dbm` dBm.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(watts: f64) -> f64 {
    10.0 * watts.log10() + 30.0
}

/// Common surface of real and complex sampled signals so that delay,
/// filtering, gain and noise can be written once.
pub trait Signal: Clone {
    fn sample_rate(&self) -> f64;
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn is_real(&self) -> bool;
    fn to_complex(&self) -> Vec<Complex64>;
    /// Rebuild a signal of the same kind from complex samples. Real signals
    /// keep the real part.
    fn with_complex(&self, samples: Vec<Complex64>) -> Self;
    fn map_scale(&self, factor: f64) -> Self;
}

impl Signal for RealWaveform {
    fn sample_rate(&self) -> f64 {
        self.sample_rate
    }
    fn len(&self) -> usize {
        self.samples.len()
    }
    fn is_real(&self) -> bool {
        true
    }
    fn to_complex(&self) -> Vec<Complex64> {
        self.samples
            .iter()
            .map(|&s| Complex64::new(s, 0.0))
            .collect()
    }
    fn with_complex(&self, samples: Vec<Complex64>) -> Self {
        RealWaveform {
            samples: samples.into_iter().map(|s| s.re).collect(),
            sample_rate: self.sample_rate,
        }
    }
    fn map_scale(&self, factor: f64) -> Self {
        self.scaled(factor)
    }
}

impl Signal for ComplexEnvelope {
    fn sample_rate(&self) -> f64 {
        self.sample_rate
    }
    fn len(&self) -> usize {
        self.samples.len()
    }
    fn is_real(&self) -> bool {
        false
    }
    fn to_complex(&self) -> Vec<Complex64> {
        self.samples.clone()
    }
    fn with_complex(&self, samples: Vec<Complex64>) -> Self {
        ComplexEnvelope {
            samples,
            sample_rate: self.sample_rate,
            center_freq: self.center_freq,
        }
    }
    fn map_scale(&self, factor: f64) -> Self {
        self.scaled(Complex64::new(factor, 0.0))
    }
}

// ---------------------------------------------------------------------------
// FFT helpers
// ---------------------------------------------------------------------------

pub(crate) fn fft_in_place(buf: &mut [Complex64]) {
    let mut planner = FftPlanner::<f64>::new();
    planner.plan_fft_forward(buf.len()).process(buf);
}

/// Inverse FFT including the 1/N normalization.
pub(crate) fn ifft_in_place(buf: &mut [Complex64]) {
    let mut planner = FftPlanner::<f64>::new();
    planner.plan_fft_inverse(buf.len()).process(buf);
    let scale = 1.0 / buf.len() as f64;
    buf.iter_mut().for_each(|v| *v *= scale);
}

/// Signed frequency of FFT bin `k` for an `n`-point transform, in cycles per
/// sample. The Nyquist bin (even `n`) maps to +0.5.
pub(crate) fn bin_freq(k: usize, n: usize) -> f64 {
    if 2 * k <= n {
        k as f64 / n as f64
    } else {
        k as f64 / n as f64 - 1.0
    }
}

/// Band-limited resampling by an integer factor via spectral zero-padding.
/// The record is treated as periodic, so the first and last few symbols
/// carry wrap-around artifacts.
pub fn resample_fft(env: &ComplexEnvelope, factor: usize) -> Result<ComplexEnvelope> {
    if factor == 0 {
        return Err(Error::invalid("resampling factor must be >= 1"));
    }
    if factor == 1 || env.is_empty() {
        return Ok(ComplexEnvelope {
            sample_rate: env.sample_rate * factor as f64,
            ..env.clone()
        });
    }
    let n = env.len();
    let m = n * factor;
    let mut bins = env.samples.clone();
    fft_in_place(&mut bins);
    let mut out = vec![Complex64::new(0.0, 0.0); m];
    let half = n / 2;
    if n.is_multiple_of(2) {
        out[..half].copy_from_slice(&bins[..half]);
        // Split the Nyquist bin symmetrically.
        out[half] = bins[half] * 0.5;
        out[m - half] = bins[half] * 0.5;
        out[m - half + 1..].copy_from_slice(&bins[half + 1..]);
    } else {
        out[..=half].copy_from_slice(&bins[..=half]);
        out[m - half..].copy_from_slice(&bins[half + 1..]);
    }
    ifft_in_place(&mut out);
    let gain = factor as f64;
    out.iter_mut().for_each(|v| *v *= gain);
    Ok(ComplexEnvelope {
        samples: out,
        sample_rate: env.sample_rate * factor as f64,
        center_freq: env.center_freq,
    })
}

/// Keep every `factor`-th sample. The caller is responsible for band-limiting.
pub fn decimate(env: &ComplexEnvelope, factor: usize) -> Result<ComplexEnvelope> {
    if factor == 0 {
        return Err(Error::invalid("decimation factor must be >= 1"));
    }
    Ok(ComplexEnvelope {
        samples: env.samples.iter().step_by(factor).copied().collect(),
        sample_rate: env.sample_rate / factor as f64,
        center_freq: env.center_freq,
    })
}

/// Integer ratio `hi / lo`, or `None` when the rates are not commensurate.
pub fn integer_ratio(hi: f64, lo: f64) -> Option<usize> {
    let r = hi / lo;
    let k = r.round();
    if k >= 1.0 && (r - k).abs() < 1e-9 * r.max(1.0) {
        Some(k as usize)
    } else {
        None
    }
}

// ---------------------------------------------------------------------------
// Mixing
// ---------------------------------------------------------------------------

/// Place a complex envelope on a carrier: `Re{a[n] exp(j2π f n / fs)}` after
/// resampling the envelope to `fs_out`.
pub fn upconvert(env: &ComplexEnvelope, carrier: f64, fs_out: f64) -> Result<RealWaveform> {
    check_rate(fs_out)?;
    let factor = integer_ratio(fs_out, env.sample_rate).ok_or_else(|| {
        Error::invalid(format!(
            "output rate {fs_out} is not an integer multiple of the envelope rate {}",
            env.sample_rate
        ))
    })?;
    // The envelope occupies at most its own Nyquist band.
    if carrier + env.sample_rate / 2.0 > fs_out / 2.0 || carrier < 0.0 {
        return Err(Error::FrequencyPlan(format!(
            "carrier {carrier} Hz plus envelope half-band {} Hz exceeds Nyquist {} Hz",
            env.sample_rate / 2.0,
            fs_out / 2.0
        )));
    }
    let up = resample_fft(env, factor)?;
    let w = 2.0 * PI * carrier / fs_out;
    let samples = up
        .samples
        .iter()
        .enumerate()
        .map(|(n, a)| (a * Complex64::from_polar(1.0, w * n as f64)).re)
        .collect();
    Ok(RealWaveform {
        samples,
        sample_rate: fs_out,
    })
}

/// Default lowpass length for [`downconvert`]: long enough for a transition
/// band a fraction of the cutoff wide.
fn downconvert_taps(fs: f64, cutoff: f64) -> usize {
    let n = (16.0 * fs / cutoff).ceil() as usize;
    n.clamp(129, 4097) | 1
}

/// Mix a real passband waveform down to complex baseband around `carrier`
/// and lowpass at `cutoff`, time-aligned with the input.
pub fn downconvert(w: &RealWaveform, carrier: f64, cutoff: f64) -> Result<ComplexEnvelope> {
    downconvert_with_taps(w, carrier, cutoff, downconvert_taps(w.sample_rate, cutoff))
}

pub fn downconvert_with_taps(
    w: &RealWaveform,
    carrier: f64,
    cutoff: f64,
    num_taps: usize,
) -> Result<ComplexEnvelope> {
    let fs = w.sample_rate;
    if !(cutoff > 0.0 && cutoff < carrier) {
        return Err(Error::FrequencyPlan(format!(
            "cutoff {cutoff} Hz must lie in (0, carrier = {carrier} Hz)"
        )));
    }
    if cutoff >= fs / 2.0 - carrier {
        return Err(Error::FrequencyPlan(format!(
            "cutoff {cutoff} Hz overlaps the band above fs/2 - carrier = {} Hz",
            fs / 2.0 - carrier
        )));
    }
    let lpf = fir_design(FilterKind::Lowpass(cutoff), fs, num_taps)?;
    let step = 2.0 * PI * carrier / fs;
    let mixed: Vec<Complex64> = w
        .samples
        .iter()
        .enumerate()
        .map(|(n, &s)| Complex64::from_polar(2.0 * s, -step * n as f64))
        .collect();
    let env = ComplexEnvelope {
        samples: mixed,
        sample_rate: fs,
        center_freq: carrier,
    };
    Ok(fir_apply(&env, &lpf, true))
}

// ---------------------------------------------------------------------------
// Delay
// ---------------------------------------------------------------------------

/// Delay by `delay` seconds (may be negative or fractional) using a
/// frequency-domain phase ramp on a zero-padded copy. Samples shifted
/// outside the record are dropped; samples shifted in are zero.
pub fn fractional_delay<S: Signal>(w: &S, delay: f64) -> Result<S> {
    let n = w.len();
    let fs = w.sample_rate();
    if n == 0 || delay == 0.0 {
        return Ok(w.clone());
    }
    if !(delay.abs() < n as f64 / fs / 4.0) {
        return Err(Error::invalid(format!(
            "|delay| = {delay} s must be below a quarter of the record ({} s)",
            n as f64 / fs / 4.0
        )));
    }
    let shift = delay * fs;
    let guard = shift.abs().ceil() as usize + 64;
    let m = (n + guard).next_power_of_two();
    let mut buf = w.to_complex();
    buf.resize(m, Complex64::new(0.0, 0.0));
    fft_in_place(&mut buf);
    for (k, v) in buf.iter_mut().enumerate() {
        let f = bin_freq(k, m);
        let ph = -2.0 * PI * f * shift;
        if 2 * k == m {
            // Keep the Nyquist bin real so real inputs stay real.
            *v *= ph.cos();
        } else {
            *v *= Complex64::from_polar(1.0, ph);
        }
    }
    ifft_in_place(&mut buf);
    // Negative delays wrap the leading samples into the padding tail; they
    // are discarded by truncation.
    buf.truncate(n);
    Ok(w.with_complex(buf))
}

// ---------------------------------------------------------------------------
// FIR design and filtering
// ---------------------------------------------------------------------------

fn hamming(n: usize, len: usize) -> f64 {
    if len == 1 {
        return 1.0;
    }
    0.54 - 0.46 * (2.0 * PI * n as f64 / (len - 1) as f64).cos()
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Hamming-windowed sinc design, linear phase. `num_taps` must be odd.
pub fn fir_design(kind: FilterKind, fs: f64, num_taps: usize) -> Result<FirTaps> {
    check_rate(fs)?;
    if num_taps.is_multiple_of(2) || num_taps == 0 {
        return Err(Error::invalid(format!(
            "num_taps must be odd, got {num_taps}"
        )));
    }
    let nyq = fs / 2.0;
    let inside = |f: f64| f > 0.0 && f < nyq;
    let mid = (num_taps - 1) as f64 / 2.0;
    let coefficients: Vec<f64> = match kind {
        FilterKind::Lowpass(fc) => {
            if !inside(fc) {
                return Err(Error::invalid(format!(
                    "cutoff {fc} Hz outside (0, {nyq}) Hz"
                )));
            }
            let c = fc / fs;
            let mut h: Vec<f64> = (0..num_taps)
                .map(|n| 2.0 * c * sinc(2.0 * c * (n as f64 - mid)) * hamming(n, num_taps))
                .collect();
            let dc: f64 = h.iter().sum();
            h.iter_mut().for_each(|v| *v /= dc);
            h
        }
        FilterKind::Bandpass(lo, hi) => {
            if !(inside(lo) && inside(hi) && lo < hi) {
                return Err(Error::invalid(format!(
                    "band edges ({lo}, {hi}) Hz must satisfy 0 < lo < hi < {nyq}"
                )));
            }
            let (cl, ch) = (lo / fs, hi / fs);
            let mut h: Vec<f64> = (0..num_taps)
                .map(|n| {
                    let t = n as f64 - mid;
                    (2.0 * ch * sinc(2.0 * ch * t) - 2.0 * cl * sinc(2.0 * cl * t))
                        * hamming(n, num_taps)
                })
                .collect();
            // Unity gain at the band center.
            let f0 = 0.5 * (cl + ch);
            let g = freq_response(&h, f0).norm();
            h.iter_mut().for_each(|v| *v /= g);
            h
        }
    };
    Ok(FirTaps {
        coefficients: symmetrize(coefficients),
        group_delay: mid,
    })
}

/// Mirror the first half onto the second so linear phase holds bit-exactly.
fn symmetrize(mut h: Vec<f64>) -> Vec<f64> {
    let n = h.len();
    for i in 0..n / 2 {
        h[n - 1 - i] = h[i];
    }
    h
}

/// Frequency response of real taps at `f` cycles/sample.
pub fn freq_response(taps: &[f64], f: f64) -> Complex64 {
    taps.iter()
        .enumerate()
        .map(|(n, &h)| Complex64::from_polar(h, -2.0 * PI * f * n as f64))
        .sum()
}

fn convolve_direct(x: &[Complex64], h: &[f64]) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); x.len() + h.len() - 1];
    for (i, &xv) in x.iter().enumerate() {
        for (j, &hv) in h.iter().enumerate() {
            out[i + j] += xv * hv;
        }
    }
    out
}

fn convolve_fft(x: &[Complex64], h: &[f64]) -> Vec<Complex64> {
    let len = x.len() + h.len() - 1;
    let m = len.next_power_of_two();
    let mut a = x.to_vec();
    a.resize(m, Complex64::new(0.0, 0.0));
    let mut b: Vec<Complex64> = h.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    b.resize(m, Complex64::new(0.0, 0.0));
    fft_in_place(&mut a);
    fft_in_place(&mut b);
    a.iter_mut().zip(&b).for_each(|(u, v)| *u *= v);
    ifft_in_place(&mut a);
    a.truncate(len);
    a
}

/// Linear convolution with `taps`. Without delay compensation the full
/// `len + taps - 1` output is returned; with it the output has the input
/// length and is advanced by the nominal group delay.
pub fn fir_apply<S: Signal>(x: &S, taps: &FirTaps, compensate_delay: bool) -> S {
    if x.is_empty() {
        return x.clone();
    }
    let input = x.to_complex();
    let h = &taps.coefficients;
    let full = if (input.len() as u64) * (h.len() as u64) <= 1 << 18 {
        convolve_direct(&input, h)
    } else {
        convolve_fft(&input, h)
    };
    if compensate_delay {
        let d = taps.group_delay.round() as usize;
        x.with_complex(full[d..d + input.len()].to_vec())
    } else {
        x.with_complex(full)
    }
}

/// Unit-energy root-raised-cosine taps spanning `span` symbols.
pub fn rrc_taps(beta: f64, samples_per_symbol: usize, span: usize) -> Result<FirTaps> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::invalid(format!("roll-off {beta} outside [0, 1]")));
    }
    if span < 8 {
        return Err(Error::invalid(format!(
            "span must be >= 8 symbols, got {span}"
        )));
    }
    if samples_per_symbol == 0 {
        return Err(Error::invalid("samples per symbol must be >= 1"));
    }
    let sps = samples_per_symbol as f64;
    let len = span * samples_per_symbol + 1;
    let mid = (len - 1) as f64 / 2.0;
    let mut h: Vec<f64> = (0..len)
        .map(|n| {
            let t = (n as f64 - mid) / sps;
            rrc_pulse(beta, t)
        })
        .collect();
    let energy: f64 = h.iter().map(|v| v * v).sum();
    let norm = energy.sqrt();
    h.iter_mut().for_each(|v| *v /= norm);
    Ok(FirTaps {
        coefficients: h,
        group_delay: mid,
    })
}

/// Continuous RRC pulse at `t` symbol periods (unnormalized).
fn rrc_pulse(beta: f64, t: f64) -> f64 {
    if t == 0.0 {
        return 1.0 - beta + 4.0 * beta / PI;
    }
    if beta > 0.0 && ((4.0 * beta * t).abs() - 1.0).abs() < 1e-12 {
        let a = PI / (4.0 * beta);
        return beta / 2f64.sqrt() * ((1.0 + 2.0 / PI) * a.sin() + (1.0 - 2.0 / PI) * a.cos());
    }
    let num = (PI * t * (1.0 - beta)).sin() + 4.0 * beta * t * (PI * t * (1.0 + beta)).cos();
    let den = PI * t * (1.0 - (4.0 * beta * t).powi(2));
    num / den
}

// ---------------------------------------------------------------------------
// Gain and noise
// ---------------------------------------------------------------------------

pub fn scale_db<S: Signal>(w: &S, gain_db: f64) -> S {
    w.map_scale(10f64.powf(gain_db / 20.0))
}

/// Add zero-mean Gaussian noise of average power `noise_power_dbm` (into
/// 1 Ω). Negative infinity disables the noise. Complex signals split the
/// power evenly between I and Q.
pub fn add_awgn<S: Signal>(w: &S, noise_power_dbm: f64, seed: u64) -> S {
    if noise_power_dbm == f64::NEG_INFINITY {
        return w.clone();
    }
    let power = dbm_to_watts(noise_power_dbm);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    let samples = w.to_complex();
    let noisy = if w.is_real() {
        let sigma = power.sqrt();
        samples
            .into_iter()
            .map(|s| s + Complex64::new(sigma * normal(), 0.0))
            .collect()
    } else {
        let sigma = (power / 2.0).sqrt();
        samples
            .into_iter()
            .map(|s| s + Complex64::new(sigma * normal(), sigma * normal()))
            .collect()
    };
    w.with_complex(noisy)
}
