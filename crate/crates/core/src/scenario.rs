//! End-to-end cancellation runs: direct-path analog cancellation with REF1,
//! adaptive reconstruction of the residual into REF2, and the combined run.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ReferenceMode, ScenarioConfig, Seeds};
use crate::dsp::{
    add_awgn, dbm_to_watts, decimate, downconvert, fractional_delay, integer_ratio, scale_db,
    upconvert, ComplexEnvelope, RealWaveform,
};
use crate::error::{Error, Result};
use crate::frontend::{channel_apply, osic_output, quantize, MultipathChannel, Quantized};
use crate::metrics::{
    band_power, cancellation_depth, evm_percent, welch_psd, CancellationDepth, PsdEstimate,
};
use crate::rls::{rls_apply, rls_init, rls_train, RlsState, TrainingTrace};
use crate::waveform::{demod_symbols, generate_qpsk, shape, SymbolStream};

/// Every waveform a run needs, all on the master-rate grid.
#[derive(Debug, Clone)]
pub struct Signals {
    /// Multipath SI at the receive antenna.
    pub si_passband: RealWaveform,
    pub soi_passband: Option<RealWaveform>,
    pub lo_passband: RealWaveform,
    /// Split of the transmit DAC output with the analog matching errors.
    pub ref1_passband: RealWaveform,
    pub noise: RealWaveform,
    /// Transmitted baseband at the DSP rate, unit power.
    pub si_baseband_original: ComplexEnvelope,
    pub si_symbols: SymbolStream,
    pub soi_symbols: Option<SymbolStream>,
    /// Fraction of transmit DAC samples that clipped.
    pub tx_clip_fraction: f64,
}

impl Signals {
    /// Lower modulator arm: SI, receiver noise, LO and optionally the SOI.
    pub fn lower_arm(&self, with_soi: bool) -> Result<RealWaveform> {
        let mut v = self.si_passband.add(&self.noise)?.add(&self.lo_passband)?;
        if with_soi {
            if let Some(soi) = &self.soi_passband {
                v = v.add(soi)?;
            }
        }
        Ok(v)
    }

    pub fn lo_amplitude(&self) -> f64 {
        self.lo_passband.peak()
    }
}

/// Tone amplitude for a power in dBm into 1 Ω.
fn amplitude_for(dbm: f64) -> f64 {
    (2.0 * dbm_to_watts(dbm)).sqrt()
}

pub fn synthesize_signals(cfg: &ScenarioConfig) -> Result<Signals> {
    cfg.validate()?;
    let fs = cfg.sample_rate;
    let n = (cfg.duration() * fs).round() as usize;

    let si_symbols = generate_qpsk(cfg.num_symbols, cfg.si_baud, cfg.seeds.si)?;
    let si_env = shape(&si_symbols, cfg.dsp_rate, cfg.pulse)?;
    let direct = cfg.channel.taps[0];

    // Scale the transmitter so the direct path delivers si_power_dbm.
    let tx_amp = amplitude_for(cfg.si_power_dbm - direct.gain_db);
    let tx_digital = upconvert(&si_env, cfg.carrier, fs)?.scaled(tx_amp);
    let tx_dac = cfg.dac.model_for(tx_digital.peak())?;
    let tx = quantize(&tx_digital, tx_dac);

    let si_passband = channel_apply(&tx.waveform, &cfg.channel, cfg.carrier)?;
    let ref1_delay = MultipathChannel::effective_delay(&direct, cfg.carrier) + cfg.ref1_delay_error;
    let ref1_passband = scale_db(
        &fractional_delay(&tx.waveform, ref1_delay)?,
        direct.gain_db + cfg.ref1_gain_error_db,
    );

    let (soi_passband, soi_symbols) = match cfg.soi_power_db {
        Some(rel_db) => {
            let stream = generate_qpsk(cfg.soi_symbols(), cfg.soi_baud, cfg.seeds.soi)?;
            let env = shape(&stream, cfg.dsp_rate, cfg.pulse)?;
            let amp = amplitude_for(cfg.si_power_dbm + rel_db);
            (
                Some(upconvert(&env, cfg.carrier, fs)?.scaled(amp)),
                Some(stream),
            )
        }
        None => (None, None),
    };

    let lo_passband = RealWaveform::tone(n, fs, cfg.lo_freq, amplitude_for(cfg.lo_power_dbm), 0.0);
    let noise = add_awgn(
        &RealWaveform::zeros(n, fs),
        cfg.noise_floor_dbm,
        cfg.seeds.noise,
    );

    Ok(Signals {
        si_passband,
        soi_passband,
        lo_passband,
        ref1_passband,
        noise,
        si_baseband_original: si_env,
        si_symbols,
        soi_symbols,
        tx_clip_fraction: tx.clip_fraction(),
    })
}

/// Drop `guard` samples from each edge.
fn trim(w: &RealWaveform, guard: usize) -> RealWaveform {
    RealWaveform {
        samples: w.samples[guard..w.len() - guard].to_vec(),
        sample_rate: w.sample_rate,
    }
}

fn master_guard(cfg: &ScenarioConfig) -> usize {
    (cfg.metrics.guard_symbols as f64 * cfg.sample_rate / cfg.si_baud).round() as usize
}

fn depth(
    cfg: &ScenarioConfig,
    before: &RealWaveform,
    after: &RealWaveform,
) -> Result<CancellationDepth> {
    let g = master_guard(cfg);
    cancellation_depth(
        &trim(before, g),
        &trim(after, g),
        cfg.depth_band(),
        cfg.metrics.welch,
    )
}

#[derive(Debug, Clone)]
pub struct Stage1 {
    /// IF output with REF1 applied (SI only unless training with the SOI).
    pub residual_if: RealWaveform,
    /// IF output with no reference at all.
    pub uncancelled_if: RealWaveform,
    /// `None` in single-reference mode, where no REF1 exists.
    pub depth_direct: Option<CancellationDepth>,
}

pub fn stage1_direct_cancel(cfg: &ScenarioConfig, signals: &Signals) -> Result<Stage1> {
    let lower = signals.lower_arm(cfg.rls.soi_during_training)?;
    let silent = RealWaveform::zeros(lower.len(), lower.sample_rate);
    let uncancelled_if = osic_output(&lower, &silent, &cfg.osic)?;
    match cfg.reference_mode {
        ReferenceMode::Dual => {
            let residual_if = osic_output(&lower, &signals.ref1_passband, &cfg.osic)?;
            let d = depth(cfg, &uncancelled_if, &residual_if)?;
            Ok(Stage1 {
                residual_if,
                uncancelled_if,
                depth_direct: Some(d),
            })
        }
        ReferenceMode::Single => Ok(Stage1 {
            residual_if: uncancelled_if.clone(),
            uncancelled_if,
            depth_direct: None,
        }),
    }
}

#[derive(Debug, Clone)]
pub struct Stage2 {
    pub rls_state: RlsState,
    pub trace: TrainingTrace,
    pub ref2_passband: RealWaveform,
    /// Regressor look-ahead, DSP-rate samples.
    pub lead: usize,
    pub train_window: std::ops::Range<usize>,
    pub adc_clip_fraction: f64,
    pub ref2_clip_fraction: f64,
    /// Band power of the desired signal `d` at the RLS input.
    pub desired_power: f64,
}

/// Lowpass cutoff when bringing the IF down to the DSP rate: halfway
/// between the occupied band edge and the DSP Nyquist frequency.
fn baseband_cutoff(cfg: &ScenarioConfig) -> f64 {
    0.5 * (cfg.si_half_band() + cfg.dsp_rate / 2.0)
}

/// IF waveform to a complex envelope at the DSP rate.
fn if_to_dsp_rate(cfg: &ScenarioConfig, w: &RealWaveform) -> Result<ComplexEnvelope> {
    let env = downconvert(w, cfg.intermediate_freq(), baseband_cutoff(cfg))?;
    let factor = integer_ratio(cfg.sample_rate, cfg.dsp_rate)
        .ok_or_else(|| Error::config("dsp_rate", "must divide sample_rate"))?;
    decimate(&env, factor)
}

/// `x(n + lead)`, zero past the end.
fn advance(x: &ComplexEnvelope, lead: usize) -> ComplexEnvelope {
    let mut samples: Vec<Complex64> = x.samples.iter().skip(lead).copied().collect();
    samples.resize(x.len(), Complex64::new(0.0, 0.0));
    ComplexEnvelope {
        samples,
        sample_rate: x.sample_rate,
        center_freq: x.center_freq,
    }
}

pub fn stage2_train_ref2(
    cfg: &ScenarioConfig,
    residual_if: &RealWaveform,
    si_baseband_original: &ComplexEnvelope,
    lo_amplitude: f64,
) -> Result<Stage2> {
    let adc = cfg
        .adc
        .model_for(residual_if.peak().max(f64::MIN_POSITIVE))?;
    let digitized = quantize(residual_if, adc);
    let d = if_to_dsp_rate(cfg, &digitized.waveform)?;
    let lead = cfg.rls.effective_lead();
    let x = advance(si_baseband_original, lead);
    if x.len() != d.len() {
        return Err(Error::Mismatch(format!(
            "regressor has {} samples, desired signal {}",
            x.len(),
            d.len()
        )));
    }
    let x = ComplexEnvelope {
        center_freq: d.center_freq,
        ..x
    };

    let start = cfg.guard_samples().max(cfg.rls.order);
    let window = start..start + cfg.rls.train_len;
    if window.end > d.len() {
        return Err(Error::config(
            "rls.train_len",
            "training window runs past the record",
        ));
    }
    let mut state = rls_init(cfg.rls.order, cfg.rls.lambda, cfg.rls.init_delta)?;
    let trace = rls_train(&mut state, &x, &d, window.clone())?;
    let y = rls_apply(&state, &x);

    // y estimates the IF envelope of the residual; map it back to an RF drive.
    let k = cfg.osic.conversion_gain(lo_amplitude);
    let drive = ComplexEnvelope {
        center_freq: cfg.carrier,
        ..y.scaled(Complex64::new(1.0 / k, 0.0))
    };
    let ref2_digital = upconvert(&drive, cfg.carrier, cfg.sample_rate)?;
    let dac = cfg
        .dac
        .model_for(ref2_digital.peak().max(f64::MIN_POSITIVE))?;
    let Quantized { waveform, clipped } = quantize(&ref2_digital, dac);
    let ref2_clip_fraction = clipped as f64 / waveform.len().max(1) as f64;

    let desired_power = d.mean_square();
    Ok(Stage2 {
        rls_state: state,
        trace,
        ref2_passband: waveform,
        lead,
        train_window: window,
        adc_clip_fraction: digitized.clip_fraction(),
        ref2_clip_fraction,
        desired_power,
    })
}

/// Names of the three cancellation stages, in report order.
pub const STAGES: [&str; 3] = ["no_sic", "direct", "multipath"];

/// Per-stage spectra and constellations, not serialized into the report.
#[derive(Debug, Clone)]
pub struct StageOutput {
    pub name: &'static str,
    pub psd: PsdEstimate,
    /// Gain-normalized SOI symbol estimates, absent without an SOI.
    pub constellation: Option<Vec<Complex64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipFractions {
    pub tx_dac: f64,
    pub adc: f64,
    pub ref2_dac: f64,
    /// Fraction of samples where the summed reference drive on the shared
    /// upper arm exceeds the modulator half-wave voltage.
    pub reference_overrange: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RlsSummary {
    pub order: usize,
    pub lambda: f64,
    pub init_delta: f64,
    pub lead: usize,
    pub train_start: usize,
    pub train_len: usize,
    /// Mean |e|² over the first and last tenth of training, dB relative to
    /// the desired-signal power.
    pub initial_mse_db: f64,
    pub final_mse_db: f64,
    pub hermitian_asymmetry: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub name: String,
    pub reference_mode: ReferenceMode,
    pub seeds: Seeds,
    pub dac_bits: u32,
    pub band_hz: [f64; 2],
    /// Depth after REF1 alone, absent in single-reference mode.
    pub depth_direct_db: Option<f64>,
    pub depth_total_db: f64,
    pub peak_delta_direct_db: Option<f64>,
    pub peak_delta_total_db: f64,
    pub floor_limited: bool,
    pub evm_no_sic_pct: Option<f64>,
    pub evm_direct_pct: Option<f64>,
    pub evm_multipath_pct: Option<f64>,
    /// REF2 band power over the band power of the residual it targets, dB.
    pub ref2_vs_residual_db: f64,
    pub clip: ClipFractions,
    pub rls: RlsSummary,
    #[serde(skip)]
    pub stages: Vec<StageOutput>,
    #[serde(skip)]
    pub weights: Vec<Complex64>,
}

impl ScenarioReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn stage(&self, name: &str) -> Option<&StageOutput> {
        self.stages.iter().find(|s| s.name == name)
    }

    /// `lag,re,im`, one row per RLS tap.
    pub fn weights_csv(&self) -> String {
        let mut out = String::from("lag,re,im\n");
        for (i, w) in self.weights.iter().enumerate() {
            out.push_str(&format!(
                "{},{:.9e},{:.9e}\n",
                i as i64 - self.rls.lead as i64,
                w.re,
                w.im
            ));
        }
        out
    }
}

/// SOI EVM from an IF output, over the symbols clear of the record guards.
fn soi_evm(
    cfg: &ScenarioConfig,
    if_out: &RealWaveform,
    soi: &SymbolStream,
) -> Result<(f64, Vec<Complex64>)> {
    let env = if_to_dsp_rate(cfg, if_out)?;
    let est = demod_symbols(&env, soi, 0.0, cfg.pulse)?;
    let guard = (cfg.metrics.guard_symbols as f64 * cfg.soi_baud / cfg.si_baud).ceil() as usize;
    let lo = guard.max(est.first_symbol);
    let hi = (soi.symbols.len() - guard).min(est.first_symbol + est.estimates.len());
    let estimates = &est.estimates[lo - est.first_symbol..hi - est.first_symbol];
    let reference = &soi.symbols[lo..hi];
    // Refit the gain on the kept symbols so edge symbols do not bias it.
    let num: Complex64 = estimates
        .iter()
        .zip(reference)
        .map(|(z, r)| z * r.conj())
        .sum();
    let den: f64 = reference.iter().map(|r| r.norm_sqr()).sum();
    let g = num / den;
    let estimates: Vec<Complex64> = estimates.iter().map(|z| z / g).collect();
    let report = evm_percent(&estimates, reference)?;
    Ok((report.evm_pct, report.constellation))
}

/// Band power of an RF waveform around the carrier, over the guarded record.
fn rf_band_power(cfg: &ScenarioConfig, w: &RealWaveform) -> Result<f64> {
    let g = master_guard(cfg);
    let psd = welch_psd(
        &trim(w, g),
        cfg.metrics.welch.segment,
        cfg.metrics.welch.overlap,
    )?;
    let h = cfg.si_half_band();
    band_power(&psd, cfg.carrier - h, cfg.carrier + h)
}

fn db_ratio(num: f64, den: f64) -> f64 {
    10.0 * (num.max(f64::MIN_POSITIVE) / den.max(f64::MIN_POSITIVE)).log10()
}

pub fn stage3_full_run(
    cfg: &ScenarioConfig,
    signals: &Signals,
    stage2: &Stage2,
) -> Result<ScenarioReport> {
    let dual = cfg.reference_mode == ReferenceMode::Dual;
    let n = signals.si_passband.len();
    let fs = cfg.sample_rate;
    let silent = RealWaveform::zeros(n, fs);
    let full_ref = if dual {
        signals.ref1_passband.add(&stage2.ref2_passband)?
    } else {
        stage2.ref2_passband.clone()
    };
    let uppers: [Option<&RealWaveform>; 3] = [
        Some(&silent),
        if dual {
            Some(&signals.ref1_passband)
        } else {
            None
        },
        Some(&full_ref),
    ];

    // Depths use the SI-only drive.
    let lower_si = signals.lower_arm(false)?;
    let si_only: Vec<Option<RealWaveform>> = uppers
        .iter()
        .map(|u| u.map(|u| osic_output(&lower_si, u, &cfg.osic)).transpose())
        .collect::<Result<_>>()?;
    let base = si_only[0].as_ref().expect("no-SIC run always present");
    let depth_direct = si_only[1]
        .as_ref()
        .map(|w| depth(cfg, base, w))
        .transpose()?;
    let depth_total = depth(
        cfg,
        base,
        si_only[2].as_ref().expect("multipath run present"),
    )?;

    // Spectra and EVMs use the full drive with the SOI.
    let with_soi: Vec<Option<RealWaveform>> = match &signals.soi_passband {
        Some(_) => {
            let lower = signals.lower_arm(true)?;
            uppers
                .iter()
                .map(|u| u.map(|u| osic_output(&lower, u, &cfg.osic)).transpose())
                .collect::<Result<_>>()?
        }
        None => si_only.clone(),
    };

    let g = master_guard(cfg);
    let mut stages = Vec::new();
    let mut evms: [Option<f64>; 3] = [None; 3];
    for (i, w) in with_soi.iter().enumerate() {
        let Some(w) = w else { continue };
        let psd = welch_psd(
            &trim(w, g),
            cfg.metrics.welch.segment,
            cfg.metrics.welch.overlap,
        )?;
        let constellation = match &signals.soi_symbols {
            Some(soi) => {
                let (evm, points) = soi_evm(cfg, w, soi)?;
                evms[i] = Some(evm);
                Some(points)
            }
            None => None,
        };
        stages.push(StageOutput {
            name: STAGES[i],
            psd,
            constellation,
        });
    }

    // How well REF2 matches the residual it was trained on, at RF.
    let target = if dual {
        signals.si_passband.sub(&signals.ref1_passband)?
    } else {
        signals.si_passband.clone()
    };
    let ref2_vs_residual_db = db_ratio(
        rf_band_power(cfg, &stage2.ref2_passband)?,
        rf_band_power(cfg, &target)?,
    );

    let trace = &stage2.trace;
    let tenth = (trace.errors.len() / 10).max(1);
    let head_mse = trace.errors[..tenth]
        .iter()
        .map(|e| e.norm_sqr())
        .sum::<f64>()
        / tenth as f64;
    let rls = RlsSummary {
        order: cfg.rls.order,
        lambda: cfg.rls.lambda,
        init_delta: cfg.rls.init_delta,
        lead: stage2.lead,
        train_start: stage2.train_window.start,
        train_len: stage2.train_window.len(),
        initial_mse_db: db_ratio(head_mse, stage2.desired_power),
        final_mse_db: db_ratio(trace.tail_mse(0.1), stage2.desired_power),
        hermitian_asymmetry: stage2.rls_state.hermitian_asymmetry(),
    };

    Ok(ScenarioReport {
        name: cfg.name.clone(),
        reference_mode: cfg.reference_mode,
        seeds: cfg.seeds,
        dac_bits: cfg.dac.bits,
        band_hz: {
            let (lo, hi) = cfg.depth_band();
            [lo, hi]
        },
        depth_direct_db: depth_direct.map(|d| d.depth_db),
        depth_total_db: depth_total.depth_db,
        peak_delta_direct_db: depth_direct.map(|d| d.peak_delta_db),
        peak_delta_total_db: depth_total.peak_delta_db,
        floor_limited: depth_total.floor_limited || depth_direct.is_some_and(|d| d.floor_limited),
        evm_no_sic_pct: evms[0],
        evm_direct_pct: evms[1],
        evm_multipath_pct: evms[2],
        ref2_vs_residual_db,
        clip: ClipFractions {
            tx_dac: signals.tx_clip_fraction,
            adc: stage2.adc_clip_fraction,
            ref2_dac: stage2.ref2_clip_fraction,
            reference_overrange: full_ref
                .samples
                .iter()
                .filter(|v| v.abs() > cfg.osic.v_pi)
                .count() as f64
                / n.max(1) as f64,
        },
        rls,
        stages,
        weights: stage2.rls_state.weights().to_vec(),
    })
}

pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioReport> {
    let signals = synthesize_signals(cfg)?;
    let s1 = stage1_direct_cancel(cfg, &signals)?;
    let s2 = stage2_train_ref2(
        cfg,
        &s1.residual_if,
        &signals.si_baseband_original,
        signals.lo_amplitude(),
    )?;
    stage3_full_run(cfg, &signals, &s2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub order: usize,
    pub depth_db: f64,
    /// Absent when the SOI is disabled.
    pub evm_pct: Option<f64>,
}

/// Stages 2 and 3 for each RLS order, sharing one synthesis and one stage-1
/// residual. Rows come back sorted by order.
pub fn sweep_filter_order(cfg: &ScenarioConfig, orders: &[usize]) -> Result<Vec<SweepPoint>> {
    if orders.is_empty() || orders.contains(&0) {
        return Err(Error::invalid(
            "orders must be a non-empty list of values >= 1",
        ));
    }
    let mut orders = orders.to_vec();
    orders.sort_unstable();
    orders.dedup();
    for &o in &orders {
        let mut c = cfg.clone();
        c.rls.order = o;
        c.validate()?;
    }
    let signals = synthesize_signals(cfg)?;
    let s1 = stage1_direct_cancel(cfg, &signals)?;
    orders
        .par_iter()
        .map(|&order| {
            let mut c = cfg.clone();
            c.rls.order = order;
            let s2 = stage2_train_ref2(
                &c,
                &s1.residual_if,
                &signals.si_baseband_original,
                signals.lo_amplitude(),
            )?;
            let r = stage3_full_run(&c, &signals, &s2)?;
            Ok(SweepPoint {
                order,
                depth_db: r.depth_total_db,
                evm_pct: r.evm_multipath_pct,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct ModeComparison {
    pub dual: ScenarioReport,
    pub single: ScenarioReport,
}

/// The same scenario with both reference architectures, identical bits,
/// channel and seeds.
pub fn compare_reference_modes(cfg: &ScenarioConfig) -> Result<ModeComparison> {
    if cfg.channel.taps.len() < 2 {
        return Err(Error::config(
            "channel.taps",
            "mode comparison needs at least two paths",
        ));
    }
    let mut dual_cfg = cfg.clone();
    dual_cfg.reference_mode = ReferenceMode::Dual;
    let mut single_cfg = cfg.clone();
    single_cfg.reference_mode = ReferenceMode::Single;
    let (dual, single) = rayon::join(|| run_scenario(&dual_cfg), || run_scenario(&single_cfg));
    Ok(ModeComparison {
        dual: dual?,
        single: single?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub mode: ReferenceMode,
    pub bits: u32,
    pub depth_db: f64,
    pub evm_pct: Option<f64>,
}

/// [`compare_reference_modes`] at each DAC resolution in `bits`; rows are
/// ordered by bits, dual before single.
pub fn compare_over_bits(cfg: &ScenarioConfig, bits: &[u32]) -> Result<Vec<CompareRow>> {
    let results: Vec<(u32, ModeComparison)> = bits
        .par_iter()
        .map(|&b| {
            let mut c = cfg.clone();
            c.dac.bits = b;
            c.validate()?;
            Ok((b, compare_reference_modes(&c)?))
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::with_capacity(2 * results.len());
    for (b, m) in results {
        for r in [&m.dual, &m.single] {
            rows.push(CompareRow {
                mode: r.reference_mode,
                bits: b,
                depth_db: r.depth_total_db,
                evm_pct: r.evm_multipath_pct,
            });
        }
    }
    Ok(rows)
}

/// Result of a REF1 gain-error calibration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub ref1_gain_error_db: f64,
    pub depth_direct_db: f64,
    pub iterations: usize,
}

/// Direct-path depth for the given REF1 gain error, holding everything
/// else in `cfg` fixed.
pub fn direct_depth_for_gain(cfg: &ScenarioConfig, gain_error_db: f64) -> Result<f64> {
    let mut c = cfg.clone();
    c.reference_mode = ReferenceMode::Dual;
    c.ref1_gain_error_db = gain_error_db;
    let signals = synthesize_signals(&c)?;
    let s1 = stage1_direct_cancel(&c, &signals)?;
    Ok(s1
        .depth_direct
        .expect("dual mode has a direct stage")
        .depth_db)
}

/// Bisect the REF1 gain error inside `bracket` until the direct-path depth
/// is within `tol_db` of `target_db`. The depth must be monotone over the
/// bracket and the target must lie between its end values.
pub fn calibrate_ref1_gain(
    cfg: &ScenarioConfig,
    target_db: f64,
    bracket: (f64, f64),
    tol_db: f64,
) -> Result<Calibration> {
    let (mut a, mut b) = bracket;
    let mut fa = direct_depth_for_gain(cfg, a)? - target_db;
    let fb = direct_depth_for_gain(cfg, b)? - target_db;
    if fa * fb > 0.0 {
        return Err(Error::invalid(format!(
            "target {target_db} dB not bracketed: depths {:.2} and {:.2} dB",
            fa + target_db,
            fb + target_db
        )));
    }
    for it in 1..=60 {
        let m = 0.5 * (a + b);
        let fm = direct_depth_for_gain(cfg, m)? - target_db;
        if fm.abs() <= tol_db {
            return Ok(Calibration {
                ref1_gain_error_db: m,
                depth_direct_db: fm + target_db,
                iterations: it,
            });
        }
        if fa * fm <= 0.0 {
            b = m;
        } else {
            a = m;
            fa = fm;
        }
    }
    Err(Error::Numerical {
        iteration: 60,
        message: "calibration did not converge".into(),
    })
}
