//! Acceptance suite. Runs every criterion, prints one line per criterion and
//! exits nonzero if any of them fails.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use mpsic_core::config::{ReferenceMode, ScenarioConfig};
use mpsic_core::dsp::{ComplexEnvelope, RealWaveform};
use mpsic_core::frontend::{osic_output, quantize, ConverterModel, MultipathChannel, MultipathTap};
use mpsic_core::metrics::{band_power, welch_psd};
use mpsic_core::rls::{rls_init, rls_train};
use mpsic_core::scenario::{
    compare_over_bits, run_scenario, stage1_direct_cancel, sweep_filter_order, synthesize_signals,
    ScenarioReport,
};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome {
            pass,
            detail: detail.into(),
        }
    }
}

type Check = fn(&mut Vec<ScenarioReport>) -> Outcome;

fn main() -> ExitCode {
    let checks: [(&str, Check); 10] = [
        ("rls matches ridge least squares", rls_vs_least_squares),
        ("rls identifies an 8-tap channel", system_identification),
        ("8-bit sine quantizer law", quantizer_law),
        ("photonic link identities", link_identities),
        ("1 ps delay error depth", analytic_depth),
        ("preset A reproduction", preset_a),
        ("preset B reproduction", preset_b),
        ("filter order sweep", order_sweep),
        ("dual vs single reference at 8 and 14 bits", dynamic_range),
        ("determinism and monotone staging", determinism),
    ];
    let mut reports = Vec::new();
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let start = Instant::now();
        let out = check(&mut reports);
        let tag = if out.pass { "PASS" } else { "FAIL" };
        if !out.pass {
            failed += 1;
        }
        println!(
            "[{tag}] {:>2} {name}: {} ({:.1} s)",
            i + 1,
            out.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!(
        "{} of {} criteria passed",
        checks.len() - failed,
        checks.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn white(n: usize, seed: u64) -> Vec<Complex64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect()
}

fn env(samples: Vec<Complex64>) -> ComplexEnvelope {
    ComplexEnvelope::new(samples, 1.0, 0.0).unwrap()
}

fn rel_error(a: &[Complex64], b: &[Complex64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
    let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
    (num / den).sqrt()
}

/// Ridge least squares by a dense solve of the regularized normal equations.
fn ridge_ls(x: &[Complex64], d: &[Complex64], order: usize, delta: f64) -> Vec<Complex64> {
    let mut r = DMatrix::<Complex64>::identity(order, order) * Complex64::new(1.0 / delta, 0.0);
    let mut p = DVector::<Complex64>::zeros(order);
    for n in 0..x.len() {
        let reg = DVector::from_iterator(
            order,
            (0..order).map(|i| if i <= n { x[n - i] } else { ZERO }),
        );
        r += &reg * reg.adjoint();
        p += &reg * d[n].conj();
    }
    r.lu().solve(&p).unwrap().iter().copied().collect()
}

fn rls_vs_least_squares(_: &mut Vec<ScenarioReport>) -> Outcome {
    let start = Instant::now();
    let n = 2000;
    let mut worst: f64 = 0.0;
    for order in [4, 8, 16] {
        let x = white(n, order as u64);
        let d = white(n, 100 + order as u64);
        let mut s = rls_init(order, 1.0, 1.0).unwrap();
        rls_train(&mut s, &env(x.clone()), &env(d.clone()), 0..n).unwrap();
        worst = worst.max(rel_error(s.weights(), &ridge_ls(&x, &d, order, 1.0)));
    }
    let t = start.elapsed();
    Outcome::new(
        worst < 1e-6 && t < Duration::from_secs(5),
        format!(
            "worst relative error {worst:.2e} over L = 4, 8, 16 (limit 1e-6), {:.2} s",
            t.as_secs_f64()
        ),
    )
}

/// Trains an order-`order` filter on `10 * order` samples of white input
/// through a channel with 8 random taps; returns misadjustment in dB.
fn identify(order: usize, delta: f64, seed: u64) -> f64 {
    let n = 10 * order;
    let x: Vec<Complex64> = white(n, seed).iter().map(|v| v * 1.5f64.sqrt()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    let mut h = vec![ZERO; order];
    let mut placed = 0;
    while placed < 8 {
        let lag = rng.gen_range(0..order);
        if h[lag] == ZERO {
            h[lag] = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            placed += 1;
        }
    }
    let d: Vec<Complex64> = (0..n)
        .map(|k| (0..order.min(k + 1)).map(|i| h[i].conj() * x[k - i]).sum())
        .collect();
    let mut s = rls_init(order, 1.0, delta).unwrap();
    rls_train(&mut s, &env(x), &env(d), 0..n).unwrap();
    20.0 * rel_error(s.weights(), &h).log10()
}

fn system_identification(_: &mut Vec<ScenarioReport>) -> Outcome {
    let start = Instant::now();
    let delta = 1e6;
    let dense = identify(8, delta, 7);
    let sparse = identify(160, delta, 9);
    let t = start.elapsed();
    Outcome::new(
        dense.max(sparse) <= -60.0 && t < Duration::from_secs(5),
        format!(
            "misadjustment {dense:.1} dB at L = 8 after 80 samples, {sparse:.1} dB at L = 160 after 1600 samples, \
             delta = {delta:e} (limit -60 dB), {:.2} s",
            t.as_secs_f64()
        ),
    )
}

fn quantizer_law(_: &mut Vec<ScenarioReport>) -> Outcome {
    let bits = 8;
    let conv = ConverterModel::new(bits, 1.0).unwrap();
    let n = 200_000;
    let w = RealWaveform::tone(n, 1.0, 0.012_345_678_9, 1.0 - conv.step(), 0.1);
    let err = quantize(&w, conv).waveform.sub(&w).unwrap();
    let snr = 10.0 * (w.mean_square() / err.mean_square()).log10();
    let law = 6.02 * bits as f64 + 1.76;
    Outcome::new(
        (snr - law).abs() <= 0.5,
        format!("SQNR {snr:.2} dB vs {law:.2} dB over {n} samples (tolerance 0.5 dB)"),
    )
}

fn link_identities(_: &mut Vec<ScenarioReport>) -> Outcome {
    let cfg = ScenarioConfig::preset("presetA_1G").unwrap();
    let link = cfg.osic;
    let fs = cfg.sample_rate;
    let n = 1 << 16;
    let band = (
        link.if_center - link.if_bandwidth / 2.0,
        link.if_center + link.if_bandwidth / 2.0,
    );
    let power =
        |w: &RealWaveform| band_power(&welch_psd(w, 8192, 0.5).unwrap(), band.0, band.1).unwrap();
    let ratio_db = |a: f64, b: f64| 10.0 * (a / b).log10();

    // Identical drives on both arms.
    let lo_amp = (2.0 * 50.0 * 1e-3 * 10f64.powf(cfg.lo_power_dbm / 10.0)).sqrt();
    let si_amp = 0.1;
    let lower = RealWaveform::tone(n, fs, cfg.carrier, si_amp, 0.0)
        .add(&RealWaveform::tone(n, fs, cfg.lo_freq, lo_amp, 0.0))
        .unwrap();
    let silent = RealWaveform::zeros(n, fs);
    let uncancelled = power(&osic_output(&lower, &silent, &link).unwrap());
    let same = power(&osic_output(&lower, &lower, &link).unwrap());
    let same_db = ratio_db(same, uncancelled);

    // SI on both arms, LO on the lower arm only.
    let si = RealWaveform::tone(n, fs, cfg.carrier, si_amp, 0.0);
    let cancelled = power(&osic_output(&lower, &si, &link).unwrap());
    let si_db = ratio_db(cancelled, uncancelled);

    // IF product amplitude against the gain that is small-signal in the SI
    // and exact in the LO.
    let out = osic_output(&lower, &silent, &link).unwrap();
    let measured = (2.0 * power(&out)).sqrt();
    let expect = link.conversion_gain(lo_amp) * si_amp;
    let amp_db = 20.0 * (measured / expect).log10();

    // Both drives small: the product term of the square law.
    let k = PI / link.v_pi;
    let (a, b) = (0.01, 0.02);
    let small = RealWaveform::tone(n, fs, cfg.carrier, a, 0.0)
        .add(&RealWaveform::tone(n, fs, cfg.lo_freq, b, 0.0))
        .unwrap();
    let small_out = osic_output(&small, &silent, &link).unwrap();
    let small_measured = (2.0 * power(&small_out)).sqrt();
    let small_db = 20.0 * (small_measured / (link.output_scale * k * k * a * b / 2.0)).log10();

    Outcome::new(
        same_db <= -60.0 && si_db <= -60.0 && amp_db.abs() <= 1.0 && small_db.abs() <= 1.0,
        format!(
            "identical arms {same_db:.1} dB, SI on both arms {si_db:.1} dB (limit -60 dB); \
             IF product {amp_db:+.3} dB vs K*a at 20 dBm LO, {small_db:+.3} dB vs square law at small drive (limit 1 dB)"
        ),
    )
}

fn analytic_depth(_: &mut Vec<ScenarioReport>) -> Outcome {
    let mut cfg = ScenarioConfig::preset("presetA_1G").unwrap();
    cfg.channel = MultipathChannel {
        taps: vec![MultipathTap {
            delay: 0.0,
            gain_db: 0.0,
            phase: 0.0,
        }],
    };
    cfg.ref1_gain_error_db = 0.0;
    cfg.ref1_delay_error = 1e-12;
    cfg.noise_floor_dbm = f64::NEG_INFINITY;
    cfg.soi_power_db = None;
    cfg.dac.bits = 16;
    let s = synthesize_signals(&cfg).unwrap();
    let d = stage1_direct_cancel(&cfg, &s)
        .unwrap()
        .depth_direct
        .unwrap()
        .depth_db;
    let expect =
        -10.0 * (2.0 * (1.0 - (2.0 * PI * cfg.carrier * cfg.ref1_delay_error).cos())).log10();
    Outcome::new(
        (d - expect).abs() <= 0.5,
        format!("depth {d:.2} dB vs closed form {expect:.2} dB (tolerance 0.5 dB)"),
    )
}

/// Runs a preset, keeping the report for the staging check.
fn timed_run(name: &str, reports: &mut Vec<ScenarioReport>) -> (ScenarioReport, f64) {
    let cfg = ScenarioConfig::preset(name).unwrap();
    let start = Instant::now();
    let r = run_scenario(&cfg).unwrap();
    let t = start.elapsed().as_secs_f64();
    reports.push(r.clone());
    (r, t)
}

fn preset_a(reports: &mut Vec<ScenarioReport>) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, min_total) in [("presetA_0p5G", 24.0), ("presetA_1G", 23.0)] {
        let (r, t) = timed_run(name, reports);
        let direct = r.depth_direct_db.unwrap();
        let (evm_d, evm_m) = (r.evm_direct_pct.unwrap(), r.evm_multipath_pct.unwrap());
        pass &= (direct - 15.0).abs() <= 1.5
            && r.depth_total_db >= min_total
            && evm_m < 15.0
            && evm_m < evm_d
            && t <= 60.0;
        parts.push(format!(
            "{name}: direct {direct:.2} dB, total {:.2} dB (min {min_total}), EVM {evm_m:.2}% vs direct {evm_d:.2}%, {t:.1} s",
            r.depth_total_db
        ));
    }
    Outcome::new(pass, parts.join("; "))
}

fn preset_b(reports: &mut Vec<ScenarioReport>) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, min_total) in [("presetB_0p5G", None), ("presetB_1G", Some(19.0))] {
        let (r, _) = timed_run(name, reports);
        let direct = r.depth_direct_db.unwrap();
        let evm_m = r.evm_multipath_pct.unwrap();
        pass &= (direct - 6.0).abs() <= 1.5
            && evm_m < 16.0
            && min_total.is_none_or(|m| r.depth_total_db >= m);
        parts.push(format!(
            "{name}: direct {direct:.2} dB, total {:.2} dB{}, EVM {evm_m:.2}%",
            r.depth_total_db,
            min_total.map_or(String::new(), |m| format!(" (min {m})"))
        ));
    }
    Outcome::new(pass, parts.join("; "))
}

fn order_sweep(_: &mut Vec<ScenarioReport>) -> Outcome {
    let cfg = ScenarioConfig::preset("presetA_0p5G").unwrap();
    let orders: Vec<usize> = (20..=200).step_by(20).collect();
    let pts = sweep_filter_order(&cfg, &orders).unwrap();
    let upto_120: Vec<_> = pts.iter().filter(|p| p.order <= 120).collect();
    let depth_ok = upto_120
        .windows(2)
        .all(|w| w[1].depth_db >= w[0].depth_db - 0.5);
    let at = |o: usize| pts.iter().find(|p| p.order == o).unwrap();
    let late_gain = at(200).depth_db - at(120).depth_db;
    let evms: Vec<f64> = pts.iter().map(|p| p.evm_pct.unwrap()).collect();
    let evm_ok = evms.windows(2).all(|w| w[1] <= w[0] + 0.5);
    let depths: Vec<String> = pts.iter().map(|p| format!("{:.1}", p.depth_db)).collect();
    Outcome::new(
        depth_ok && late_gain <= 1.0 && evm_ok,
        format!(
            "depths [{}] dB, gain 120 to 200 {late_gain:+.2} dB (max 1), EVM {:.2}% to {:.2}%",
            depths.join(", "),
            evms[0],
            evms[evms.len() - 1]
        ),
    )
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len().is_multiple_of(2) {
        0.5 * (v[m - 1] + v[m])
    } else {
        v[m]
    }
}

fn dynamic_range(_: &mut Vec<ScenarioReport>) -> Outcome {
    let base = ScenarioConfig::preset("presetA_0p5G").unwrap();
    let mut gaps8 = Vec::new();
    let mut gaps14 = Vec::new();
    for seed in 1..=10u64 {
        let rows = compare_over_bits(&base.clone().with_seed(seed), &[8, 14]).unwrap();
        let depth = |mode: ReferenceMode, bits: u32| {
            rows.iter()
                .find(|r| r.mode == mode && r.bits == bits)
                .unwrap()
                .depth_db
        };
        gaps8.push(depth(ReferenceMode::Dual, 8) - depth(ReferenceMode::Single, 8));
        gaps14.push(depth(ReferenceMode::Dual, 14) - depth(ReferenceMode::Single, 14));
    }
    let all_dual = gaps8.iter().all(|g| *g >= 0.0);
    let (m8, m14) = (median(gaps8.clone()), median(gaps14));
    let min8 = gaps8.iter().copied().fold(f64::INFINITY, f64::min);
    Outcome::new(
        all_dual && m8 > m14,
        format!("10 seeds: smallest 8-bit gap {min8:+.2} dB, median gap {m8:+.2} dB at 8 bits vs {m14:+.2} dB at 14 bits"),
    )
}

fn determinism(reports: &mut Vec<ScenarioReport>) -> Outcome {
    let cfg = ScenarioConfig::preset("presetB_1G").unwrap();
    let first = run_scenario(&cfg).unwrap();
    let identical = first.to_json() == run_scenario(&cfg).unwrap().to_json();
    reports.push(first);
    let mut worst = f64::INFINITY;
    for r in reports.iter() {
        if let Some(direct) = r.depth_direct_db {
            worst = worst.min(r.depth_total_db - direct);
        }
    }
    Outcome::new(
        identical && worst >= -0.5 && !reports.is_empty(),
        format!(
            "repeated report identical: {identical}; smallest total minus direct {worst:+.2} dB over {} reports",
            reports.len()
        ),
    )
}
