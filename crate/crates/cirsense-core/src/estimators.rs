//! Converts aligned motion signals into respiration rate and absolute target
//! distance, and computes sensing-SNR reports.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

use crate::config::SystemConfig;
use crate::domino::CleanSeries;
use crate::dylign::{tap_variance_profile, AlignmentResult};
use crate::error::{Error, Result};
use crate::recovery::PartialDftOperator;
use crate::series::complex_variance;

/// Respiration extraction parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RespirationOptions {
    /// Physiological band, Hz (6-42 bpm).
    pub band_hz: (f64, f64),
    /// Moving-average smoothing window, seconds.
    pub smoothing_s: f64,
    /// Periodogram evaluation grid step, Hz.
    pub grid_step_hz: f64,
    /// Peak must exceed the in-band median by this much, dB.
    pub peak_gate_db: f64,
}

impl Default for RespirationOptions {
    fn default() -> Self {
        Self {
            band_hz: (0.1, 0.7),
            smoothing_s: 0.25,
            grid_step_hz: 1e-3,
            peak_gate_db: 6.0,
        }
    }
}

/// Estimated respiration rate in breaths per minute.
pub fn respiration_rate(motion_signal: &[Complex64], sample_rate_hz: f64) -> Result<f64> {
    respiration_rate_with(motion_signal, sample_rate_hz, &RespirationOptions::default())
}

/// Respiration rate with explicit options: complex mean removal (static
/// component), moving-average smoothing, folded periodogram over the band,
/// parabolic interpolation of the log-power peak.
pub fn respiration_rate_with(
    motion_signal: &[Complex64],
    sample_rate_hz: f64,
    opts: &RespirationOptions,
) -> Result<f64> {
    if sample_rate_hz <= 0.0 {
        return Err(Error::Config("sample rate must be positive".into()));
    }
    let got_s = motion_signal.len() as f64 / sample_rate_hz;
    let need_s = 2.0 / opts.band_hz.0;
    if got_s + 1e-9 < need_s {
        return Err(Error::TooShort { got_s, need_s });
    }

    let mean = motion_signal.iter().sum::<Complex64>() / motion_signal.len() as f64;
    let centered: Vec<Complex64> = motion_signal.iter().map(|x| x - mean).collect();
    let window = ((opts.smoothing_s * sample_rate_hz).round() as usize).max(1);
    let smoothed = moving_average(&centered, window);

    let spectrum = periodogram(
        &smoothed,
        sample_rate_hz,
        opts.band_hz,
        opts.grid_step_hz,
    );
    let (peak_idx, &(peak_hz, peak_power)) = spectrum
        .iter()
        .enumerate()
        .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
        .expect("band grid is never empty");
    let median = {
        let mut p: Vec<f64> = spectrum.iter().map(|&(_, v)| v).collect();
        p.sort_by(f64::total_cmp);
        p[p.len() / 2]
    };
    if !(peak_power > 0.0) || median <= 0.0 {
        return Err(Error::NoRespiration {
            prominence_db: 0.0,
            gate_db: opts.peak_gate_db,
        });
    }
    let prominence_db = 10.0 * (peak_power / median).log10();
    if prominence_db < opts.peak_gate_db {
        return Err(Error::NoRespiration {
            prominence_db,
            gate_db: opts.peak_gate_db,
        });
    }

    let refined_hz = if peak_idx > 0 && peak_idx + 1 < spectrum.len() {
        let l = spectrum[peak_idx - 1].1.max(f64::MIN_POSITIVE).ln();
        let c = peak_power.ln();
        let r = spectrum[peak_idx + 1].1.max(f64::MIN_POSITIVE).ln();
        let denom = l - 2.0 * c + r;
        let delta = if denom < 0.0 {
            (0.5 * (l - r) / denom).clamp(-0.5, 0.5)
        } else {
            0.0
        };
        peak_hz + delta * opts.grid_step_hz
    } else {
        peak_hz
    };
    Ok(60.0 * refined_hz)
}

/// Folded two-sided periodogram of a complex signal: per band frequency `f`,
/// `(|X(f)|² + |X(-f)|²) / n²`, so rotations of either handedness register.
pub fn periodogram(
    signal: &[Complex64],
    sample_rate_hz: f64,
    band_hz: (f64, f64),
    step_hz: f64,
) -> Vec<(f64, f64)> {
    let n = signal.len();
    let points = (((band_hz.1 - band_hz.0) / step_hz).round() as usize).max(1) + 1;
    let norm = 1.0 / (n as f64 * n as f64);
    (0..points)
        .map(|i| {
            let f = band_hz.0 + i as f64 * step_hz;
            let rate = -TAU * f / sample_rate_hz;
            let step = Complex64::from_polar(1.0, rate);
            let mut w = Complex64::ONE;
            let mut pos = Complex64::ZERO;
            let mut neg = Complex64::ZERO;
            for (t, x) in signal.iter().enumerate() {
                if t % 64 == 0 {
                    w = Complex64::from_polar(1.0, rate * t as f64);
                }
                pos += x * w;
                neg += x * w.conj();
                w *= step;
            }
            (f, (pos.norm_sqr() + neg.norm_sqr()) * norm)
        })
        .collect()
}

/// Centered moving average with clamped edges; window forced odd.
pub fn moving_average(signal: &[Complex64], window: usize) -> Vec<Complex64> {
    let half = window / 2;
    let n = signal.len();
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            signal[lo..hi].iter().sum::<Complex64>() / (hi - lo) as f64
        })
        .collect()
}

/// Absolute reflected-path length from the aligned relative delay:
/// `c · τ_est + d0`, with `d0` the known transceiver separation.
pub fn target_distance(
    result: &AlignmentResult,
    cfg: &SystemConfig,
    d0_m: f64,
) -> Result<f64> {
    if d0_m <= 0.0 {
        return Err(Error::Config("transceiver separation d0 must be positive".into()));
    }
    if result.relative_delay_s < 0.0 {
        return Err(Error::NegativeDelay {
            delay_s: result.relative_delay_s,
        });
    }
    Ok(cfg.light_speed_mps * result.relative_delay_s + d0_m)
}

/// Half the excess path: the bistatic-ellipse range used by geometry mode.
pub fn ellipse_range_m(result: &AlignmentResult, cfg: &SystemConfig) -> f64 {
    0.5 * cfg.light_speed_mps * result.relative_delay_s.max(0.0)
}

/// Where the tap-domain noise power comes from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseFloor {
    /// Estimate from motion-free taps (variance below a multiple of the
    /// median, away from the aligned tap).
    Measured,
    /// Per-subcarrier noise power in the normalized (clean) domain, e.g.
    /// from [`crate::domino::DominoResult::clean_noise_power`].
    CleanSubcarrierPower(f64),
}

/// Sensing-SNR report: aligned-tap ratio and the best-subcarrier comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsnrReport {
    /// Target-reflected power at the aligned tap.
    pub target_power: f64,
    /// Noise power at the aligned tap.
    pub noise_power: f64,
    /// `10 log10(target_power / noise_power)`.
    pub ratio_db: f64,
    /// Same ratio computed on the max-variance subcarrier of the normalized
    /// CSI.
    pub per_subcarrier_ratio_db: f64,
}

/// SSNR of the aligned dynamic tap (and of the best subcarrier, for the
/// delay-domain vs frequency-domain comparison).
///
/// `gt_coherence` is the squared coherence `|μ|²` computed from ground-truth
/// delays when available; it converts the measured tap variance into the
/// full target-reflected power. Without it the raw variance is used.
pub fn ssnr_report(
    clean: &CleanSeries,
    op: &PartialDftOperator,
    alignment: &AlignmentResult,
    floor: NoiseFloor,
    gt_coherence: Option<f64>,
) -> Result<SsnrReport> {
    tap_ssnr(
        clean,
        op,
        alignment.tap_index,
        alignment.fractional_shift,
        floor,
        gt_coherence,
    )
}

/// SSNR of an arbitrary (tap, shift) pair; `shift = 0` gives the unaligned
/// tap ratio.
pub fn tap_ssnr(
    clean: &CleanSeries,
    op: &PartialDftOperator,
    tap: i32,
    shift_taps: f64,
    floor: NoiseFloor,
    gt_coherence: Option<f64>,
) -> Result<SsnrReport> {
    let trace = crate::dylign::shifted_tap_trace(clean, op, tap, shift_taps)?;
    let tap_variance = complex_variance(&trace);

    // Per-subcarrier (unit-gain) noise power in the clean domain.
    let unit_noise = match floor {
        NoiseFloor::CleanSubcarrierPower(p) => {
            if !(p > 0.0) {
                return Err(Error::NoNoiseFloor);
            }
            p
        }
        NoiseFloor::Measured => {
            let profile = tap_variance_profile(&clean.cir, None);
            let median = {
                let mut p = profile.clone();
                p.sort_by(f64::total_cmp);
                p[p.len() / 2]
            };
            let mut acc = 0.0;
            let mut count = 0usize;
            for (row, &v) in profile.iter().enumerate() {
                let t = clean.cir.tap_of_row(row);
                if (t - tap).abs() <= 2 || v > 3.0 * median {
                    continue;
                }
                let gain = op.noise_gain(t).unwrap_or(1.0);
                acc += v / gain;
                count += 1;
            }
            if count == 0 {
                return Err(Error::NoNoiseFloor);
            }
            acc / count as f64
        }
    };
    let noise_power = unit_noise * op.noise_gain(tap).unwrap_or(1.0);

    let coherence_correction = match gt_coherence {
        Some(mu2) if mu2 < 1.0 => 1.0 / (1.0 - mu2),
        _ => 1.0,
    };
    let target_power =
        ((tap_variance - noise_power).max(f64::MIN_POSITIVE)) * coherence_correction;

    // Best subcarrier of the normalized CSI against the same unit noise.
    let mut best_sc = 0.0f64;
    for k in 0..clean.csi.n_subcarriers() {
        let mut mean = Complex64::ZERO;
        for i in 0..clean.csi.n_frames() {
            mean += clean.csi.frame(i)[k];
        }
        mean /= clean.csi.n_frames().max(1) as f64;
        let mut var = 0.0;
        for i in 0..clean.csi.n_frames() {
            var += (clean.csi.frame(i)[k] - mean).norm_sqr();
        }
        var /= clean.csi.n_frames().max(1) as f64;
        best_sc = best_sc.max(var);
    }
    let sc_target = ((best_sc - unit_noise).max(f64::MIN_POSITIVE)) * coherence_correction;

    Ok(SsnrReport {
        target_power,
        noise_power,
        ratio_db: 10.0 * (target_power / noise_power).log10(),
        per_subcarrier_ratio_db: 10.0 * (sc_target / unit_noise).log10(),
    })
}

/// Sensing output modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensingMode {
    Respiration,
    Distance,
    Dual,
    Multi,
}

/// One per-target, per-window sensing record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensingResult {
    pub mode: SensingMode,
    pub target_id: usize,
    pub window_start_s: f64,
    pub window_end_s: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub respiration_bpm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub distance_m: Option<f64>,
    pub relative_delay_taps: f64,
    pub ssnr_db: f64,
    pub interference_degraded: bool,
}
